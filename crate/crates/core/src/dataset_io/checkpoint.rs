//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PCSM" | u32 version | u32 manifest_len | manifest (UTF-8) | f64 blobs
//! ```
//!
//! The manifest is line-oriented text:
//!
//! ```text
//! stage stage1
//! rng <64 hex seed chars> <stream> <word_pos>
//! hp <key> <value...>
//! blob <name> <dim>x<dim>...
//! ```
//!
//! Blob values follow in manifest order.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"PCSM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialisable ChaCha8 position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: Stage,
    pub rng: RngState,
    pub hyper: BTreeMap<String, String>,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn from_params(store: &ParamStore, stage: Stage, rng: RngState, hyper: BTreeMap<String, String>) -> Self {
        let blobs = store
            .iter()
            .map(|(_, p)| Blob {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Self {
            version: VERSION,
            stage,
            rng,
            hyper,
            blobs,
        }
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    /// Copies every blob whose name matches a parameter of `store`. Returns
    /// the number copied; a matching name with a different shape is an
    /// error.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<usize> {
        let mut n = 0;
        for b in &self.blobs {
            if let Some(id) = store.id(&b.name) {
                let p = store.get_mut(id);
                if p.value.shape() != b.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {} has shape {:?}, checkpoint has {:?}",
                        b.name,
                        p.value.shape(),
                        b.shape
                    )));
                }
                p.value = Tensor::new(&b.shape, b.values.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }

    fn manifest(&self) -> String {
        let mut m = format!("stage {}\n", self.stage.as_str());
        let seed: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        m.push_str(&format!("rng {seed} {} {}\n", self.rng.stream, self.rng.word_pos));
        for (k, v) in &self.hyper {
            m.push_str(&format!("hp {k} {v}\n"));
        }
        for b in &self.blobs {
            let dims: Vec<String> = b.shape.iter().map(|d| d.to_string()).collect();
            m.push_str(&format!("blob {} {}\n", b.name, dims.join("x")));
        }
        m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for b in &self.blobs {
            let n: usize = b.shape.iter().product();
            if n != b.values.len() || b.name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("malformed blob {}", b.name)));
            }
        }
        let manifest = self.manifest();
        let total: usize = self.blobs.iter().map(|b| b.values.len()).sum();
        let mut out = Vec::with_capacity(12 + manifest.len() + total * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for b in &self.blobs {
            for v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing PCSM magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let manifest = bytes
            .get(12..12 + mlen)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| bad("manifest is not UTF-8"))?;

        let mut stage = None;
        let mut rng = None;
        let mut hyper = BTreeMap::new();
        let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
        for line in manifest.lines() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "stage" => {
                    stage = Some(match rest {
                        "stage1" => Stage::Stage1,
                        "stage2" => Stage::Stage2,
                        other => return Err(Error::Checkpoint(format!("unknown stage {other}"))),
                    })
                }
                "rng" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    if f.len() != 3 || f[0].len() != 64 {
                        return Err(bad("malformed rng line"));
                    }
                    let mut seed = [0u8; 32];
                    for (i, s) in seed.iter_mut().enumerate() {
                        *s = u8::from_str_radix(&f[0][2 * i..2 * i + 2], 16).map_err(|_| bad("bad rng seed"))?;
                    }
                    rng = Some(RngState {
                        seed,
                        stream: f[1].parse().map_err(|_| bad("bad rng stream"))?,
                        word_pos: f[2].parse().map_err(|_| bad("bad rng position"))?,
                    });
                }
                "hp" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    hyper.insert(k.to_string(), v.to_string());
                }
                "blob" => {
                    let (name, dims) = rest.split_once(' ').ok_or_else(|| bad("malformed blob line"))?;
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| bad("bad blob shape")))
                        .collect::<Result<Vec<_>>>()?;
                    specs.push((name.to_string(), shape));
                }
                "" => {}
                other => return Err(Error::Checkpoint(format!("unknown manifest key {other}"))),
            }
        }
        let mut offset = 12 + mlen;
        let mut blobs = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let n: usize = shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for blob {name}")))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            blobs.push(Blob { name, shape, values });
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after blobs"));
        }
        Ok(Self {
            version,
            stage: stage.ok_or_else(|| bad("manifest lacks stage"))?,
            rng: rng.ok_or_else(|| bad("manifest lacks rng state"))?,
            hyper,
            blobs,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample(n: usize) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = rng.random();
        let mut hyper = BTreeMap::new();
        hyper.insert("lr".to_string(), "0.0005".to_string());
        hyper.insert("note".to_string(), "two words".to_string());
        Checkpoint {
            version: VERSION,
            stage: Stage::Stage2,
            rng: RngState::capture(&rng),
            hyper,
            blobs: vec![
                Blob {
                    name: "enc.0.w".into(),
                    shape: vec![n, 2],
                    values: (0..2 * n).map(|i| (i as f64).sin() * 1e-7 + i as f64).collect(),
                },
                Blob {
                    name: "odd".into(),
                    shape: vec![3],
                    values: vec![f64::MIN_POSITIVE, -0.0, f64::MAX],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample(17);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.blobs.iter().zip(&c.blobs) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let mut r1 = c.rng.restore();
        let mut r2 = back.rng.restore();
        assert_eq!(r1.random::<u64>(), r2.random::<u64>());
    }

    #[test]
    fn corrupt_files_fail() {
        let bytes = sample(4).to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[4] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
    }

    #[test]
    fn ten_megabyte_file_round_trips_quickly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.pcsm");
        let c = sample(10 * 1024 * 1024 / 16);
        let t = std::time::Instant::now();
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let elapsed = t.elapsed();
        assert_eq!(back, c);
        assert!(std::fs::metadata(&path).unwrap().len() >= 10 * 1024 * 1024);
        assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
    }
}
