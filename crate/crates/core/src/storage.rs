//! Binary on-disk formats for training histories and unlearning outcomes.
//!
//! Both files are little-endian throughout and carry no timestamps, so a
//! seeded run always dumps byte-identical files.
//!
//! History file (magic `FUHIST01`):
//!
//! ```text
//! magic            8 bytes  "FUHIST01"
//! num_clients      u32
//! rounds           u32      recorded round count
//! local_epochs     u32
//! batch_size       u32
//! learning_rate    f64
//! seed             u64
//! num_dims         u32      then num_dims x u32 layer dims
//! client_sizes     num_clients x u64
//! initial          P x f64  (P = parameter count from dims)
//! per round, in order, blocks of [round u32, client i32, role u8, P x f64]:
//!   global_before  client -1, role 0
//!   locals         client k,  role 1   (one block per client)
//!   global_after   client -1, role 2
//! ```
//!
//! Outcome file (magic `FUOUTC01`):
//!
//! ```text
//! magic              8 bytes  "FUOUTC01"
//! method             u8       0 federaser, 1 retrain, 2 sga_ewc
//! rounds_used        u32
//! target_client      u32
//! forgotten_classes  u32 count, then count x u32
//! retained lists     u32 num_clients, then per client u64 count + count x u64
//! num_dims           u32      then num_dims x u32 layer dims
//! global_after       P x f64
//! target_local_after P x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::federation::{client_weights, FederationHistory, FLConfig, RoundRecord};
use crate::model::{LayerLayout, ParamVector};
use crate::unlearning::{Method, UnlearnOutcome};

const HISTORY_MAGIC: &[u8; 8] = b"FUHIST01";
const OUTCOME_MAGIC: &[u8; 8] = b"FUOUTC01";

const ROLE_GLOBAL_BEFORE: u8 = 0;
const ROLE_LOCAL: u8 = 1;
const ROLE_GLOBAL_AFTER: u8 = 2;

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Self { inner }
    }

    fn bytes(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::Format(format!("truncated file while reading {what}")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b, what)?;
        Ok(i32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64(what)?);
        }
        Ok(out)
    }

    fn expect_end(&mut self, what: &str) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format(format!("trailing bytes after {what}"))),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

fn write_params<W: Write>(w: &mut W, params: &ParamVector) -> Result<()> {
    for &v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_block<W: Write>(
    w: &mut W,
    round: u32,
    client: i32,
    role: u8,
    params: &ParamVector,
) -> Result<()> {
    w.write_all(&round.to_le_bytes())?;
    w.write_all(&client.to_le_bytes())?;
    w.write_all(&[role])?;
    write_params(w, params)
}

fn read_block<R: Read>(
    r: &mut Reader<R>,
    round: u32,
    client: i32,
    role: u8,
    layout: &Arc<LayerLayout>,
) -> Result<ParamVector> {
    let what = "parameter block header";
    let got_round = r.u32(what)?;
    let got_client = r.i32(what)?;
    let got_role = r.u8(what)?;
    if (got_round, got_client, got_role) != (round, client, role) {
        return Err(Error::Format(format!(
            "unexpected block header (round {got_round}, client {got_client}, role {got_role}); \
             expected (round {round}, client {client}, role {role})"
        )));
    }
    let values = r.f64_vec(layout.num_params(), "parameter block values")?;
    ParamVector::from_values(layout, values)
}

fn write_dims<W: Write>(w: &mut W, layout: &LayerLayout) -> Result<()> {
    w.write_all(&(layout.dims().len() as u32).to_le_bytes())?;
    for &d in layout.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_dims<R: Read>(r: &mut Reader<R>) -> Result<Arc<LayerLayout>> {
    let n = r.u32("layer dim count")? as usize;
    if n < 2 || n > 64 {
        return Err(Error::Format(format!("implausible layer dim count {n}")));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        dims.push(r.u32("layer dim")? as usize);
    }
    LayerLayout::new(&dims).map_err(|e| Error::Format(format!("bad layer dims: {e}")))
}

/// Writes a training history dump.
pub fn save_history(path: &Path, history: &FederationHistory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(HISTORY_MAGIC)?;
    let config = &history.config;
    w.write_all(&(config.num_clients as u32).to_le_bytes())?;
    w.write_all(&(history.num_rounds() as u32).to_le_bytes())?;
    w.write_all(&(config.local_epochs as u32).to_le_bytes())?;
    w.write_all(&(config.batch_size as u32).to_le_bytes())?;
    w.write_all(&config.learning_rate.to_le_bytes())?;
    w.write_all(&config.seed.to_le_bytes())?;
    write_dims(&mut w, history.layout())?;
    for &size in &history.client_sizes {
        w.write_all(&(size as u64).to_le_bytes())?;
    }
    write_params(&mut w, &history.initial)?;
    for record in &history.rounds {
        let round = record.round as u32;
        write_block(&mut w, round, -1, ROLE_GLOBAL_BEFORE, &record.global_before)?;
        for (k, local) in record.locals.iter().enumerate() {
            write_block(&mut w, round, k as i32, ROLE_LOCAL, local)?;
        }
        write_block(&mut w, round, -1, ROLE_GLOBAL_AFTER, &record.global_after)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a training history dump.
pub fn load_history(path: &Path) -> Result<FederationHistory> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 8];
    r.bytes(&mut magic, "magic")?;
    if &magic != HISTORY_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?} (expected {HISTORY_MAGIC:?})",
            path.display()
        )));
    }
    let num_clients = r.u32("num_clients")? as usize;
    let rounds = r.u32("rounds")? as usize;
    let local_epochs = r.u32("local_epochs")? as usize;
    let batch_size = r.u32("batch_size")? as usize;
    let learning_rate = r.f64("learning_rate")?;
    let seed = r.u64("seed")?;
    let layout = read_dims(&mut r)?;
    if num_clients == 0 || num_clients > 1_000_000 {
        return Err(Error::Format(format!("implausible client count {num_clients}")));
    }
    let mut client_sizes = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        client_sizes.push(r.u64("client size")? as usize);
    }
    let initial =
        ParamVector::from_values(&layout, r.f64_vec(layout.num_params(), "initial params")?)?;

    let dims = layout.dims();
    let config = FLConfig {
        num_clients,
        rounds,
        local_epochs,
        batch_size,
        learning_rate,
        hidden_dims: dims[1..dims.len() - 1].to_vec(),
        seed,
    };
    let weights = client_weights(&client_sizes)
        .map_err(|e| Error::Format(format!("stored client sizes unusable: {e}")))?;

    let mut records = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let r32 = round as u32;
        let global_before = read_block(&mut r, r32, -1, ROLE_GLOBAL_BEFORE, &layout)?;
        let mut locals = Vec::with_capacity(num_clients);
        for k in 0..num_clients {
            locals.push(read_block(&mut r, r32, k as i32, ROLE_LOCAL, &layout)?);
        }
        let global_after = read_block(&mut r, r32, -1, ROLE_GLOBAL_AFTER, &layout)?;
        records.push(RoundRecord {
            round,
            global_before,
            locals,
            weights: weights.clone(),
            global_after,
        });
    }
    r.expect_end("history rounds")?;
    Ok(FederationHistory { config, client_sizes, initial, rounds: records })
}

fn method_code(method: Method) -> u8 {
    match method {
        Method::FedEraser => 0,
        Method::Retrain => 1,
        Method::SgaEwc => 2,
    }
}

fn method_from_code(code: u8) -> Result<Method> {
    match code {
        0 => Ok(Method::FedEraser),
        1 => Ok(Method::Retrain),
        2 => Ok(Method::SgaEwc),
        other => Err(Error::Format(format!("unknown method code {other}"))),
    }
}

/// Writes an unlearning-outcome dump.
pub fn save_outcome(path: &Path, outcome: &UnlearnOutcome) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(OUTCOME_MAGIC)?;
    w.write_all(&[method_code(outcome.method)])?;
    w.write_all(&(outcome.rounds_used as u32).to_le_bytes())?;
    w.write_all(&(outcome.target_client as u32).to_le_bytes())?;
    w.write_all(&(outcome.forgotten_classes.len() as u32).to_le_bytes())?;
    for &c in &outcome.forgotten_classes {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    w.write_all(&(outcome.retained_by_client.len() as u32).to_le_bytes())?;
    for list in &outcome.retained_by_client {
        w.write_all(&(list.len() as u64).to_le_bytes())?;
        for &i in list {
            w.write_all(&(i as u64).to_le_bytes())?;
        }
    }
    write_dims(&mut w, outcome.global_after.layout())?;
    write_params(&mut w, &outcome.global_after)?;
    write_params(&mut w, &outcome.target_local_after)?;
    w.flush()?;
    Ok(())
}

/// Reads an unlearning-outcome dump.
pub fn load_outcome(path: &Path) -> Result<UnlearnOutcome> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    let mut magic = [0u8; 8];
    r.bytes(&mut magic, "magic")?;
    if &magic != OUTCOME_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?} (expected {OUTCOME_MAGIC:?})",
            path.display()
        )));
    }
    let method = method_from_code(r.u8("method")?)?;
    let rounds_used = r.u32("rounds_used")? as usize;
    let target_client = r.u32("target_client")? as usize;
    let n_classes = r.u32("forgotten class count")? as usize;
    if n_classes > 1_000_000 {
        return Err(Error::Format(format!("implausible forgotten class count {n_classes}")));
    }
    let mut forgotten_classes = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        forgotten_classes.push(r.u32("forgotten class")? as usize);
    }
    let num_clients = r.u32("client count")? as usize;
    if num_clients == 0 || num_clients > 1_000_000 {
        return Err(Error::Format(format!("implausible client count {num_clients}")));
    }
    let mut retained_by_client = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        let n = r.u64("retained count")? as usize;
        if n > 100_000_000 {
            return Err(Error::Format(format!("implausible retained count {n}")));
        }
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            list.push(r.u64("retained index")? as usize);
        }
        retained_by_client.push(list);
    }
    if target_client >= num_clients {
        return Err(Error::Format(format!(
            "target client {target_client} out of range ({num_clients} clients)"
        )));
    }
    let layout = read_dims(&mut r)?;
    let global_after =
        ParamVector::from_values(&layout, r.f64_vec(layout.num_params(), "global_after")?)?;
    let target_local_after = ParamVector::from_values(
        &layout,
        r.f64_vec(layout.num_params(), "target_local_after")?,
    )?;
    r.expect_end("outcome payload")?;
    Ok(UnlearnOutcome {
        method,
        global_after,
        target_local_after,
        target_client,
        forgotten_classes,
        retained_by_client,
        rounds_used,
    })
}
