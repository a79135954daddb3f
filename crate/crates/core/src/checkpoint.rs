//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic, version, config hash, seed, next epoch, policy, prior,
//! optional reward statistics, optional critic. Floats are stored as raw
//! IEEE-754 bits so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::critic::CriticModel;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rewards::{RewardStats, N_COMPONENTS};

const MAGIC: &[u8; 8] = b"PATHRLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub seed: u64,
    /// Epoch the next update would run; per-sample rollout streams are
    /// derived from `(seed, epoch, input, sample)`, so this is the full rng
    /// state.
    pub next_epoch: u64,
    pub policy: PolicyParams,
    pub prior: PolicyParams,
    pub stats: Option<RewardStats>,
    pub critic: Option<CriticModel>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(CHECKPOINT_VERSION)?;
        w.write_all(&self.config_hash)?;
        w.write_u64::<LE>(self.seed)?;
        w.write_u64::<LE>(self.next_epoch)?;
        write_policy(w, &self.policy)?;
        write_policy(w, &self.prior)?;
        match &self.stats {
            None => w.write_u8(0)?,
            Some(s) => {
                w.write_u8(1)?;
                w.write_u64::<LE>(s.count)?;
                for c in 0..N_COMPONENTS {
                    w.write_f64::<LE>(s.mean[c])?;
                    w.write_f64::<LE>(s.m2[c])?;
                }
                w.write_u8(s.frozen as u8)?;
            }
        }
        match &self.critic {
            None => w.write_u8(0)?,
            Some(c) => {
                w.write_u8(1)?;
                for v in [c.input_dim, c.hidden, c.l_max] {
                    w.write_u64::<LE>(v as u64)?;
                }
                write_floats(w, &c.w1)?;
                write_floats(w, &c.b1)?;
                write_floats(w, &c.w2)?;
                w.write_f64::<LE>(c.b2)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let ck = Self::read_from(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len())));
        }
        Ok(ck)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LE>().map_err(truncated)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash).map_err(truncated)?;
        let seed = r.read_u64::<LE>().map_err(truncated)?;
        let next_epoch = r.read_u64::<LE>().map_err(truncated)?;
        let policy = read_policy(r)?;
        let prior = read_policy(r)?;
        let stats = match read_flag(r)? {
            false => None,
            true => {
                let count = r.read_u64::<LE>().map_err(truncated)?;
                let mut mean = [0.0; N_COMPONENTS];
                let mut m2 = [0.0; N_COMPONENTS];
                for c in 0..N_COMPONENTS {
                    mean[c] = r.read_f64::<LE>().map_err(truncated)?;
                    m2[c] = r.read_f64::<LE>().map_err(truncated)?;
                }
                let frozen = read_flag(r)?;
                Some(RewardStats { count, mean, m2, frozen })
            }
        };
        let critic = match read_flag(r)? {
            false => None,
            true => {
                let input_dim = read_len(r)?;
                let hidden = read_len(r)?;
                let l_max = read_len(r)?;
                let w1 = read_floats(r)?;
                let b1 = read_floats(r)?;
                let w2 = read_floats(r)?;
                let b2 = r.read_f64::<LE>().map_err(truncated)?;
                if w1.len() != hidden * input_dim || b1.len() != hidden || w2.len() != hidden {
                    return Err(Error::Format("critic tensor shapes disagree".into()));
                }
                Some(CriticModel {
                    input_dim,
                    hidden,
                    l_max,
                    w1,
                    b1,
                    w2,
                    b2,
                })
            }
        };
        Ok(Checkpoint {
            config_hash,
            seed,
            next_epoch,
            policy,
            prior,
            stats,
            critic,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated checkpoint: {e}"))
}

fn read_flag<R: Read>(r: &mut R) -> Result<bool> {
    match r.read_u8().map_err(truncated)? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::Format(format!("invalid flag byte {b}"))),
    }
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = r.read_u64::<LE>().map_err(truncated)?;
    usize::try_from(v).map_err(|_| Error::Format(format!("length {v} does not fit in memory")))
}

fn write_floats<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    w.write_u64::<LE>(xs.len() as u64)?;
    for &x in xs {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_floats<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_len(r)?;
    let mut xs = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        xs.push(r.read_f64::<LE>().map_err(truncated)?);
    }
    Ok(xs)
}

fn write_policy<W: Write>(w: &mut W, p: &PolicyParams) -> Result<()> {
    w.write_u64::<LE>(p.n_items() as u64)?;
    w.write_u64::<LE>(p.feature_dim() as u64)?;
    w.write_f64::<LE>(p.temperature())?;
    w.write_u8(p.mask_target() as u8)?;
    write_floats(w, p.weights())
}

fn read_policy<R: Read>(r: &mut R) -> Result<PolicyParams> {
    let n_items = read_len(r)?;
    let feature_dim = read_len(r)?;
    let temperature = r.read_f64::<LE>().map_err(truncated)?;
    let mask = read_flag(r)?;
    let weights = read_floats(r)?;
    PolicyParams::from_weights(n_items, feature_dim, temperature, mask, weights)
        .map_err(|e| Error::Format(format!("bad policy block: {e}")))
}
