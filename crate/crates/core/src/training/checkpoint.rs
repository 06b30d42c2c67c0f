//! Checkpoint files, little-endian:
//!
//! ```text
//! "MCKP" | version u16
//! scenario u8 | in u32 | out u32 | base u32 | depth u32 | dropout f32 | activation u8
//! digest [u8; 32]        SHA-256 of the canonical config string
//! epoch u32
//! param count u32, then per parameter:
//!     name len u16 | name | ndim u8 | dims u32 × ndim | f32 payload
//! adam t u64 | beta1 f64 | beta2 f64 | eps f64 | m then v, per parameter
//! batch-norm count u32, then per layer:
//!     name len u16 | name | channels u32 | mean f32 × c | var f32 × c
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AdamState, Scenario};
use crate::diffgrid::{Grid, RunningStats};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::unet::{Activation, UNetConfig, UNetModel};

pub const MAGIC: [u8; 4] = *b"MCKP";
pub const VERSION: u16 = 1;
pub const BEST_FILE: &str = "best.ckpt";
const WHAT: &str = "checkpoint";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub scenario: Scenario,
    pub model: UNetModel,
    pub adam: AdamState,
    pub epoch: u32,
}

/// Canonical identity of a (scenario, architecture) pair.
pub fn config_digest(scenario: Scenario, unet: &UNetConfig) -> [u8; 32] {
    Sha256::digest(format!("scenario={scenario};{}", unet.canonical()).as_bytes()).into()
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let cfg = ck.model.config();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ck.scenario.code());
    for v in [
        cfg.in_channels,
        cfg.out_channels,
        cfg.base_channels,
        cfg.depth,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    out.push(cfg.hidden_activation.code());
    out.extend_from_slice(&config_digest(ck.scenario, cfg));
    out.extend_from_slice(&ck.epoch.to_le_bytes());
    out.extend_from_slice(&(ck.model.params().len() as u32).to_le_bytes());
    for (name, p) in ck.model.names().iter().zip(ck.model.params()) {
        put_name(&mut out, name);
        out.push(p.shape().len() as u8);
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, p.data());
    }
    out.extend_from_slice(&ck.adam.t.to_le_bytes());
    for x in [ck.adam.beta1, ck.adam.beta2, ck.adam.eps] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for m in ck.adam.m.iter().chain(&ck.adam.v) {
        put_f32s(&mut out, m);
    }
    let bn: Vec<_> = ck.model.batchnorm().collect();
    out.extend_from_slice(&(bn.len() as u32).to_le_bytes());
    for (name, s) in bn {
        put_name(&mut out, name);
        out.extend_from_slice(&(s.mean.len() as u32).to_le_bytes());
        put_f32s(&mut out, &s.mean);
        put_f32s(&mut out, &s.var);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::TruncatedPayload {
                expected: self.pos.saturating_add(n),
                found: self.buf.len(),
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::parse(WHAT, "length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::parse(WHAT, "name is not UTF-8"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let sc = r.u8()?;
    let scenario = Scenario::from_code(sc)
        .ok_or_else(|| Error::parse(WHAT, format!("unknown scenario code {sc}")))?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dropout_rate = r.f32()?;
    let ac = r.u8()?;
    let hidden_activation = Activation::from_code(ac)
        .ok_or_else(|| Error::parse(WHAT, format!("unknown activation code {ac}")))?;
    let unet = UNetConfig {
        in_channels: dims[0],
        out_channels: dims[1],
        base_channels: dims[2],
        depth: dims[3],
        dropout_rate,
        hidden_activation,
    };
    unet.validate()
        .map_err(|e| Error::parse(WHAT, e.to_string()))?;
    let digest: [u8; 32] = r.array()?;
    if digest != config_digest(scenario, &unet) {
        return Err(Error::parse(WHAT, "config digest does not match header"));
    }
    let epoch = r.u32()?;

    let layout = unet.parameter_layout();
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(Error::NameSetMismatch(format!(
            "header config has {} parameters, file lists {count}",
            layout.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for (lname, lshape) in &layout {
        let name = r.name()?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &name != lname || &shape != lshape {
            return Err(Error::NameSetMismatch(format!(
                "expected {lname} {lshape:?}, found {name} {shape:?}"
            )));
        }
        let n = shape.iter().product();
        params.push((name, Grid::from_vec(&shape, r.f32s(n)?)?));
    }
    let t = r.u64()?;
    let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
    let sizes: Vec<usize> = params.iter().map(|(_, g)| g.len()).collect();
    let m = sizes
        .iter()
        .map(|&n| r.f32s(n))
        .collect::<Result<Vec<_>>>()?;
    let v = sizes
        .iter()
        .map(|&n| r.f32s(n))
        .collect::<Result<Vec<_>>>()?;
    let adam = AdamState {
        m,
        v,
        t,
        beta1,
        beta2,
        eps,
    };
    let bn_count = r.u32()? as usize;
    let bn_layout = unet.batchnorm_layout();
    if bn_count != bn_layout.len() {
        return Err(Error::NameSetMismatch(format!(
            "header config has {} batch-norm layers, file lists {bn_count}",
            bn_layout.len()
        )));
    }
    let mut bn = Vec::with_capacity(bn_count);
    for _ in 0..bn_count {
        let name = r.name()?;
        let c = r.u32()? as usize;
        let (lname, lc) = &bn_layout[bn.len()];
        if &name != lname || c != *lc {
            return Err(Error::NameSetMismatch(format!(
                "expected batch-norm {lname}, found {name}"
            )));
        }
        let mean = r.f32s(c)?;
        let var = r.f32s(c)?;
        bn.push((name, RunningStats { mean, var }));
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(
            WHAT,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let model = UNetModel::from_parts(unet, params, bn)?;
    Ok(Checkpoint {
        scenario,
        model,
        adam,
        epoch,
    })
}

/// Atomic write (temporary file, then rename).
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fsutil::write_atomic(path, &encode(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fsutil::read(path)?)
}

impl Checkpoint {
    /// Rejects a checkpoint whose scenario or architecture differs from the
    /// expected one.
    pub fn expect_config(&self, scenario: Scenario, unet: &UNetConfig) -> Result<()> {
        if config_digest(scenario, unet) != config_digest(self.scenario, self.model.config()) {
            return Err(Error::NameSetMismatch(format!(
                "checkpoint holds {} [{}], expected {} [{}]",
                self.scenario,
                self.model.config().canonical(),
                scenario,
                unet.canonical()
            )));
        }
        Ok(())
    }
}
