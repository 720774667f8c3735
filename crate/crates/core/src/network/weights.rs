use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::NetworkSpec;
use super::layer::Norm;
use super::{NetworkError, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FGDW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Tensors per node, in the order the node's convolution units consume them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    nodes: BTreeMap<String, Vec<Tensor>>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: impl Into<String>, tensors: Vec<Tensor>) {
        self.nodes.insert(node.into(), tensors);
    }

    pub fn get(&self, node: &str) -> Option<&[Tensor]> {
        self.nodes.get(node).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, node: &str) -> Option<&mut Vec<Tensor>> {
        self.nodes.get_mut(node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Tensor])> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Zero kernels and biases; batch norm set to the identity transform.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        Self::build(spec, |_, _, _| 0.0, false)
    }

    /// Reproducible random weights scaled to keep activations bounded.
    pub fn seeded(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(
            spec,
            move |_, fan_in, _| {
                let a = (3.0 / fan_in as f32).sqrt();
                rng.gen_range(-a..a)
            },
            true,
        )
    }

    fn build(spec: &NetworkSpec, mut kernel: impl FnMut(usize, usize, usize) -> f32, jitter: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut store = Self::new();
        for (id, units) in spec.conv_plan()? {
            let mut tensors = Vec::new();
            for u in units {
                let fan_in = u.kernel * u.kernel * u.in_channels;
                let shape = vec![u.kernel, u.kernel, u.in_channels, u.out_channels];
                tensors.push(Tensor::from_fn(shape, |i| kernel(i, fan_in, u.out_channels)).map_err(tensor_err(&id))?);
                let c = u.out_channels;
                let mut vec_of = |lo: f32, hi: f32| {
                    let data = (0..c)
                        .map(|_| if jitter { rng.gen_range(lo..hi) } else { (lo + hi) / 2.0 })
                        .collect();
                    Tensor::new(vec![c], data).map_err(tensor_err(&id))
                };
                match u.norm {
                    Norm::BatchNorm => {
                        tensors.push(vec_of(0.9, 1.1)?);
                        tensors.push(vec_of(-0.05, 0.05)?);
                        tensors.push(vec_of(-0.05, 0.05)?);
                        tensors.push(vec_of(0.8, 1.2)?);
                    }
                    Norm::Bias => tensors.push(vec_of(-0.05, 0.05)?),
                }
            }
            store.insert(id, tensors);
        }
        Ok(store)
    }

    /// Checks that every parameterised node has exactly the tensors its
    /// layer expects, and that no weights name unknown nodes.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let plan = spec.conv_plan()?;
        for (id, units) in &plan {
            let tensors = self
                .get(id)
                .ok_or_else(|| NetworkError::MissingWeights { node: id.clone() })?;
            let expected: Vec<Vec<usize>> = units.iter().flat_map(|u| u.tensor_shapes()).collect();
            if tensors.len() != expected.len() {
                return Err(NetworkError::TensorCount {
                    node: id.clone(),
                    expected: expected.len(),
                    found: tensors.len(),
                });
            }
            for (i, (t, e)) in tensors.iter().zip(&expected).enumerate() {
                if t.shape() != e.as_slice() {
                    return Err(NetworkError::WeightShape {
                        node: id.clone(),
                        tensor: i,
                        expected: e.clone(),
                        found: t.shape().to_vec(),
                    });
                }
            }
        }
        for id in self.nodes.keys() {
            if !plan.iter().any(|(p, _)| p == id) {
                return Err(NetworkError::UnexpectedWeights { node: id.clone() });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(self.nodes.len(), "node count")?.to_le_bytes());
        for (id, tensors) in &self.nodes {
            out.extend_from_slice(&u32_len(id.len(), "node id length")?.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.push(u8_len(tensors.len(), "tensor count")?);
            for t in tensors {
                out.push(u8_len(t.shape().len(), "tensor rank")?);
                for &d in t.shape() {
                    out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 {
            return Err(NetworkError::Truncated("missing header".into()));
        }
        if r.take(4, "magic")? != WEIGHTS_MAGIC {
            return Err(NetworkError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != WEIGHTS_VERSION {
            return Err(NetworkError::Version {
                found: version,
                expected: WEIGHTS_VERSION,
            });
        }
        let count = r.u32("node count")?;
        let mut store = Self::new();
        for _ in 0..count {
            let len = r.u32("node id length")? as usize;
            let id = std::str::from_utf8(r.take(len, "node id")?)
                .map_err(|_| NetworkError::Malformed("node id is not UTF-8".into()))?
                .to_string();
            let n = r.u8(&id)?;
            let mut tensors = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let rank = r.u8(&id)? as usize;
                let shape = (0..rank)
                    .map(|_| r.u32(&id).map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let numel = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .and_then(|n| n.checked_mul(4))
                    .ok_or_else(|| NetworkError::Malformed(format!("node `{id}`: tensor too large")))?;
                let raw = r.take(numel, &id)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                tensors
                    .push(Tensor::new(shape, data).map_err(|e| NetworkError::Malformed(format!("node `{id}`: {e}")))?);
            }
            if store.nodes.insert(id.clone(), tensors).is_some() {
                return Err(NetworkError::Malformed(format!("duplicate node `{id}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(NetworkError::Malformed(format!(
                "{} trailing bytes after last node",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    /// Writes via a temporary file so a failed save never leaves a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp-fgdw");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and validates against `spec`.
    pub fn load_for(path: &Path, spec: &NetworkSpec) -> Result<Self> {
        let store = Self::load(path)?;
        store.validate(spec)?;
        Ok(store)
    }
}

fn tensor_err(node: &str) -> impl Fn(crate::tensor::TensorError) -> NetworkError + '_ {
    move |source| NetworkError::Tensor {
        node: node.to_string(),
        source,
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| NetworkError::Invalid(format!("{what} {n} exceeds u32")))
}

fn u8_len(n: usize, what: &str) -> Result<u8> {
    u8::try_from(n).map_err(|_| NetworkError::Invalid(format!("{what} {n} exceeds 255")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                NetworkError::Truncated(format!(
                    "needed {n} bytes for {ctx} at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, ctx: &str) -> Result<u32> {
        let b = self.take(4, ctx)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, ctx: &str) -> Result<u8> {
        Ok(self.take(1, ctx)?[0])
    }
}
