//! Binary checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "QFCK"  u32 version
//! str label  str backbone  u32 size_param  u8 mode
//! u64 seed  u64 iterations  u32 qp_count  i32 qp...
//! u32 block_count
//! block: u8 kind (0 weight, 1 bias, 2 theta)  u32 layer  u32 ndims  u32 dim...  f32 value...
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8 bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Arch, Mode, Network};

pub const MAGIC: &[u8; 4] = b"QFCK";
pub const VERSION: u32 = 1;

const KIND_WEIGHT: u8 = 0;
const KIND_BIAS: u8 = 1;
const KIND_THETA: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub label: String,
    pub seed: u64,
    pub iterations: u64,
    pub qps: Vec<i32>,
    pub net: Network<f32>,
}

impl Checkpoint {
    pub fn arch(&self) -> Arch {
        self.net.spec().arch
    }

    pub fn mode(&self) -> Mode {
        self.net.mode()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut buf, &self.label)?;
        put_str(&mut buf, self.arch().name())?;
        put_u32(&mut buf, self.arch().size_param())?;
        buf.push(self.mode().code());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.iterations.to_le_bytes());
        put_u32(&mut buf, self.qps.len())?;
        for qp in &self.qps {
            buf.extend_from_slice(&qp.to_le_bytes());
        }

        let mut blocks: Vec<(u8, usize, Vec<usize>, &[f32])> = Vec::new();
        for (i, conv) in self.net.convs().iter().enumerate() {
            let s = conv.spec;
            blocks.push((KIND_WEIGHT, i, vec![s.out_channels, s.filter_depth(), s.kernel, s.kernel], &conv.weight));
            if let Some(b) = &conv.bias {
                blocks.push((KIND_BIAS, i, vec![b.len()], b));
            }
        }
        for (i, t) in self.net.theta().iter().enumerate() {
            blocks.push((KIND_THETA, i, vec![t.len()], &t.theta));
        }
        put_u32(&mut buf, blocks.len())?;
        for (kind, layer, dims, data) in blocks {
            buf.push(kind);
            put_u32(&mut buf, layer)?;
            put_u32(&mut buf, dims.len())?;
            for d in dims {
                put_u32(&mut buf, d)?;
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let label = r.string()?;
        let arch_name = r.string()?;
        let size_param = r.u32()? as usize;
        let code = r.u8()?;
        let mode = Mode::from_code(code).ok_or_else(|| Error::format("checkpoint", format!("unknown mode code {code}")))?;
        let arch = Arch::from_name(&arch_name, (size_param > 0).then_some(size_param))?;
        if arch.size_param() != size_param {
            return Err(Error::format("checkpoint", format!("size parameter {size_param} invalid for {arch_name}")));
        }
        let seed = r.u64()?;
        let iterations = r.u64()?;
        let qp_count = r.u32()? as usize;
        let qps = (0..qp_count).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;

        let mut net = Network::<f32>::zeros(arch.build(mode)?)?;
        let conv_count = net.convs().len();
        let block_count = r.u32()? as usize;
        let mut seen = std::collections::HashSet::new();
        for _ in 0..block_count {
            let kind = r.u8()?;
            let layer = r.u32()? as usize;
            let ndims = r.u32()? as usize;
            if ndims > 4 {
                return Err(Error::format("checkpoint", format!("{ndims}-dimensional block")));
            }
            let dims = (0..ndims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            if layer >= conv_count {
                return Err(Error::format("checkpoint", format!("block for layer {layer} of {conv_count}")));
            }
            if !seen.insert((kind, layer)) {
                return Err(Error::format("checkpoint", format!("duplicate block {kind} for layer {layer}")));
            }
            let target: &mut [f32] = match kind {
                KIND_WEIGHT => &mut net.convs_mut()[layer].weight,
                KIND_BIAS => net.convs_mut()[layer]
                    .bias
                    .as_deref_mut()
                    .ok_or_else(|| Error::format("checkpoint", format!("layer {layer} has no bias")))?,
                KIND_THETA => {
                    let theta = net.theta_mut();
                    if theta.is_empty() {
                        return Err(Error::format("checkpoint", format!("{mode} model cannot hold θ")));
                    }
                    &mut theta[layer].theta
                }
                other => return Err(Error::format("checkpoint", format!("unknown block kind {other}"))),
            };
            if len != target.len() {
                return Err(Error::format(
                    "checkpoint",
                    format!("layer {layer} block {kind}: shape {dims:?} holds {len} values, model needs {}", target.len()),
                ));
            }
            for v in target.iter_mut() {
                *v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            }
        }
        let expected = net.param_groups().len();
        if seen.len() != expected {
            return Err(Error::format("checkpoint", format!("{} parameter blocks, model needs {expected}", seen.len())));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        for t in net.theta() {
            t.validate()?;
        }
        Ok(Checkpoint {
            label,
            seed,
            iterations,
            qps,
            net,
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::file(path, e))?)
    }

    /// Loads and converts to `mode`; a vanilla checkpoint loads into
    /// qp-adaptive mode with every θ zero.
    pub fn load_as(path: &Path, mode: Mode) -> Result<Self> {
        let mut ck = Self::load(path)?;
        ck.net = ck.net.into_mode(mode)?;
        Ok(ck)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("checkpoint", format!("{v} does not fit in 32 bits")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(buf, s.len())?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::format("checkpoint", "invalid UTF-8"))
    }
}
