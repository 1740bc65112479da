//! Versioned binary checkpoints.
//!
//! ```text
//! "UMCK" u32 version
//! str kind                      (u32 length + UTF-8)
//! u64 epoch
//! str config                    key=value lines
//! [u8; 32] sha256(config)
//! u64 adam step
//! u32 record count, then per record:
//!   str name, u8 trainable, u8 constraint, u32 ndim, u64 dims…,
//!   f64 values…, u8 has_moments, [f64 m…, f64 v…]
//! ```
//!
//! Integers and floats are little-endian. Reloading is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Result, TrainError};
use crate::srnet::{SrConfig, SrNetwork};
use crate::tensor::{AdamState, Constraint, Moments, ParamSet, Parameter, Tensor};
use crate::unmixing::{UnmixingConfig, UnmixingNetwork};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetKind {
    Unmixing,
    Sr,
}

impl NetKind {
    fn tag(self) -> &'static str {
        match self {
            Self::Unmixing => "unmixing",
            Self::Sr => "sr",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: NetKind,
    pub epoch: u64,
    pub config: String,
    pub params: ParamSet,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.config.as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, self.kind.tag());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.config_hash());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            put_str(&mut out, p.name());
            out.push(p.trainable() as u8);
            out.push(match p.constraint() {
                Constraint::None => 0,
                Constraint::NonNegative => 1,
            });
            let shape = p.value().shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut out, p.value().data());
            match self.adam.moments.get(p.name()) {
                Some(m) => {
                    out.push(1);
                    put_f64s(&mut out, &m.m);
                    put_f64s(&mut out, &m.v);
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(TrainError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match r.string()?.as_str() {
            "unmixing" => NetKind::Unmixing,
            "sr" => NetKind::Sr,
            other => return Err(TrainError::Checkpoint(format!("unknown network kind `{other}`"))),
        };
        let epoch = r.u64()?;
        let config = r.string()?;
        let hash = r.take(32)?;
        if hash != Sha256::digest(config.as_bytes()).as_slice() {
            return Err(TrainError::Checkpoint("config hash mismatch".into()));
        }
        let step = r.u64()?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        let mut moments = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let trainable = r.byte()? != 0;
            let constraint = match r.byte()? {
                0 => Constraint::None,
                1 => Constraint::NonNegative,
                c => return Err(TrainError::Checkpoint(format!("unknown constraint {c} on `{name}`"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.filter(|n| *n <= bytes.len() / 8).ok_or_else(|| {
                TrainError::Checkpoint(format!("implausible shape {shape:?} for `{name}`"))
            })?;
            let values = r.f64s(numel)?;
            let mut p = Parameter::new(name.clone(), Tensor::new(shape, values).map_err(crate::ModelError::from)?)
                .with_constraint(constraint);
            p.set_trainable(trainable);
            if r.byte()? == 1 {
                let m = r.f64s(numel)?;
                let v = r.f64s(numel)?;
                moments.insert(name, Moments { m, v });
            }
            params.insert(p).map_err(crate::ModelError::from)?;
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            kind,
            epoch,
            config,
            params,
            adam: AdamState { step, moments },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn expect_kind(&self, kind: NetKind) -> Result<()> {
        if self.kind != kind {
            return Err(TrainError::Config(format!(
                "expected a {} checkpoint, found {}",
                kind.tag(),
                self.kind.tag()
            )));
        }
        Ok(())
    }

    pub fn unmixing_network(&self) -> Result<UnmixingNetwork> {
        self.expect_kind(NetKind::Unmixing)?;
        let cfg = parse_unmixing(&kv(&self.config)?, "")?;
        Ok(UnmixingNetwork::from_params(cfg, self.params.clone())?)
    }

    /// The SR network and the frozen unmixing network embedded with it.
    pub fn sr_networks(&self) -> Result<(SrNetwork, UnmixingNetwork)> {
        self.expect_kind(NetKind::Sr)?;
        let map = kv(&self.config)?;
        let ucfg = parse_unmixing(&map, "unmix.")?;
        let scfg = SrConfig {
            bands: num(&map, "bands")?,
            endmembers: num(&map, "endmembers")?,
            scale: num(&map, "scale")?,
            width: num(&map, "width")?,
            grams: num(&map, "grams")?,
            mam: get(&map, "mam")?
                .parse()
                .map_err(|_| TrainError::Checkpoint("bad `mam` value".into()))?,
            deconv: get(&map, "deconv")?.parse()?,
        };
        let (mut sr_ps, mut un_ps) = (ParamSet::new(), ParamSet::new());
        for p in self.params.iter() {
            let target = if p.name().starts_with("unmix.") { &mut un_ps } else { &mut sr_ps };
            target.insert(p.clone()).map_err(crate::ModelError::from)?;
        }
        Ok((
            SrNetwork::from_params(scfg, sr_ps)?,
            UnmixingNetwork::from_params(ucfg, un_ps)?,
        ))
    }
}

pub fn unmixing_config_text(cfg: &UnmixingConfig) -> String {
    format!(
        "bands={}\nendmembers={}\nwidth={}\ngrams={}\n",
        cfg.bands, cfg.endmembers, cfg.width, cfg.grams
    )
}

pub fn sr_config_text(cfg: &SrConfig, unmix: &UnmixingConfig) -> String {
    format!(
        "bands={}\nendmembers={}\nscale={}\nwidth={}\ngrams={}\nmam={}\ndeconv={}\nunmix.bands={}\nunmix.endmembers={}\nunmix.width={}\nunmix.grams={}\n",
        cfg.bands,
        cfg.endmembers,
        cfg.scale,
        cfg.width,
        cfg.grams,
        cfg.mam,
        cfg.deconv.as_str(),
        unmix.bands,
        unmix.endmembers,
        unmix.width,
        unmix.grams
    )
}

fn kv(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| TrainError::Checkpoint(format!("bad config line `{l}`")))
        })
        .collect()
}

fn get<'m>(map: &'m BTreeMap<String, String>, key: &str) -> Result<&'m str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| TrainError::Checkpoint(format!("config lacks `{key}`")))
}

fn num(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    get(map, key)?
        .parse()
        .map_err(|_| TrainError::Checkpoint(format!("bad `{key}` value")))
}

fn parse_unmixing(map: &BTreeMap<String, String>, prefix: &str) -> Result<UnmixingConfig> {
    Ok(UnmixingConfig {
        bands: num(map, &format!("{prefix}bands"))?,
        endmembers: num(map, &format!("{prefix}endmembers"))?,
        width: num(map, &format!("{prefix}width"))?,
        grams: num(map, &format!("{prefix}grams"))?,
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            TrainError::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Checkpoint("invalid UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| TrainError::Checkpoint("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
