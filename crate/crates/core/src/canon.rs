//! Number and string encodings shared by the canonical emitters. Key order
//! is each writer's responsibility; this module only pins how individual
//! values are rendered so equal data always serializes to equal bytes.

pub fn push_json_string(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn push_float(out: &mut String, v: f64) {
    out.push_str(&format!("{v:.16e}"));
}

pub fn push_float_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_float(out, v);
    }
    out.push(']');
}

pub fn push_usize_array<'a, I: IntoIterator<Item = &'a usize>>(out: &mut String, values: I) {
    out.push('[');
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out.push(']');
}
