//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "BITR"  u32 version
//! u32 depth, channels, plane_index, input_bits, container_bits, width
//! u32 head (0 sigmoid, 1 linear), u32 target (0 bitplane, 1 next_image, 2 residual)
//! f32 normalization, f32 bn_momentum, f32 bn_epsilon, u32 init (1 = he_normal)
//! u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 ndim, u32 dims[ndim], f32 data[prod(dims)]
//! ```
//!
//! Tensors appear in trainable-parameter order followed by the running mean
//! and variance of every batch norm.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{BitplaneNetwork, Head, NetworkMeta, TargetKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BITR";
pub const VERSION: u32 = 1;
const INIT_HE_NORMAL: u32 = 1;

fn head_code(h: Head) -> u32 {
    match h {
        Head::Sigmoid => 0,
        Head::Linear => 1,
    }
}

fn target_code(t: TargetKind) -> u32 {
    match t {
        TargetKind::Bitplane => 0,
        TargetKind::NextImage => 1,
        TargetKind::Residual => 2,
    }
}

fn bn_prefixes(depth: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(2 * depth + 1);
    for i in 0..depth {
        out.push(format!("blocks.{i}.bn1"));
        out.push(format!("blocks.{i}.bn2"));
    }
    out.push("bn_out".to_string());
    out
}

/// `(name, dims, values)` for every stored tensor, in file order.
fn named_tensors(net: &BitplaneNetwork<f32>) -> Vec<(String, Vec<u32>, Vec<f32>)> {
    let mut out = Vec::new();
    for (name, values) in net.parameter_names().into_iter().zip(net.parameters()) {
        let dims = if name.ends_with(".weight") {
            let conv = conv_for(net, &name);
            vec![conv.out_channels as u32, conv.in_channels as u32, 3, 3]
        } else {
            vec![values.len() as u32]
        };
        out.push((name, dims, values.to_vec()));
    }
    let depth = net.blocks.len();
    for (prefix, bn) in bn_prefixes(depth).into_iter().zip(net.batch_norms()) {
        let c = bn.channels() as u32;
        out.push((format!("{prefix}.running_mean"), vec![c], bn.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), vec![c], bn.running_var.clone()));
    }
    out
}

fn conv_for<'a>(net: &'a BitplaneNetwork<f32>, name: &str) -> &'a super::conv::Conv2d<f32> {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["conv_in", ..] => &net.conv_in,
        ["conv_out", ..] => &net.conv_out,
        ["blocks", i, "conv1", ..] => &net.blocks[i.parse::<usize>().expect("block index")].conv1,
        ["blocks", i, "conv2", ..] => &net.blocks[i.parse::<usize>().expect("block index")].conv2,
        _ => unreachable!("`{name}` is not a convolution weight"),
    }
}

pub fn save_model(net: &BitplaneNetwork<f32>) -> Vec<u8> {
    let m = net.meta();
    let mut buf = Vec::with_capacity(4 * m.stored_parameter_count() + 4096);
    buf.extend_from_slice(MAGIC);
    let u = |buf: &mut Vec<u8>, v: u32| buf.extend_from_slice(&v.to_le_bytes());
    let f = |buf: &mut Vec<u8>, v: f32| buf.extend_from_slice(&v.to_le_bytes());
    u(&mut buf, VERSION);
    for v in [m.depth, m.channels, m.plane_index, m.input_bits, m.container_bits, m.width] {
        u(&mut buf, v);
    }
    u(&mut buf, head_code(m.head));
    u(&mut buf, target_code(m.target));
    f(&mut buf, m.normalization());
    f(&mut buf, m.bn_momentum);
    f(&mut buf, m.bn_epsilon);
    u(&mut buf, INIT_HE_NORMAL);
    let tensors = named_tensors(net);
    u(&mut buf, tensors.len() as u32);
    for (name, dims, values) in tensors {
        u(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        u(&mut buf, dims.len() as u32);
        for d in dims {
            u(&mut buf, d);
        }
        for v in values {
            f(&mut buf, v);
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<BitplaneNetwork<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected \"BITR\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return Err(r.err(format!("unsupported format version {version}")));
    }
    let meta_start = r.pos;
    let mut fields = [0u32; 6];
    for (v, what) in fields.iter_mut().zip(["depth", "channels", "plane_index", "input_bits", "container_bits", "width"]) {
        *v = r.u32(what)?;
    }
    let [depth, channels, plane_index, input_bits, container_bits, width] = fields;
    let head = match r.u32("head")? {
        0 => Head::Sigmoid,
        1 => Head::Linear,
        other => return Err(r.err(format!("unknown head code {other}"))),
    };
    let target = match r.u32("target")? {
        0 => TargetKind::Bitplane,
        1 => TargetKind::NextImage,
        2 => TargetKind::Residual,
        other => return Err(r.err(format!("unknown target code {other}"))),
    };
    let norm = r.f32("normalization")?;
    let bn_momentum = r.f32("bn_momentum")?;
    let bn_epsilon = r.f32("bn_epsilon")?;
    let init = r.u32("init")?;
    if init != INIT_HE_NORMAL {
        return Err(r.err(format!("unknown init code {init}")));
    }
    let meta = NetworkMeta {
        depth,
        channels,
        width,
        plane_index,
        input_bits,
        container_bits,
        head,
        target,
        bn_momentum,
        bn_epsilon,
    };
    let meta_err = |e: Error| Error::Format { offset: meta_start as u64, message: format!("bad metadata: {e}") };
    meta.validate().map_err(meta_err)?;
    if norm != meta.normalization() {
        return Err(Error::Format {
            offset: meta_start as u64,
            message: format!("normalization {norm} does not match a {container_bits}-bit container"),
        });
    }

    // Weights are overwritten below; the generator only sizes the tensors.
    let mut net = BitplaneNetwork::<f32>::new(meta, &mut ChaCha8Rng::seed_from_u64(0)).map_err(meta_err)?;
    let expected = named_tensors(&net);
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        r.pos -= 4;
        return Err(r.err(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, dims, _) in &expected {
        let at = r.pos;
        let len = r.u32("tensor name length")? as usize;
        let got = r.take(len, "tensor name")?;
        if got != name.as_bytes() {
            r.pos = at;
            return Err(r.err(format!("expected tensor `{name}`, found `{}`", String::from_utf8_lossy(got))));
        }
        let ndim = r.u32("tensor rank")? as usize;
        if ndim > 8 {
            return Err(r.err(format!("tensor `{name}` has implausible rank {ndim}")));
        }
        let mut got_dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            got_dims.push(r.u32("tensor dims")?);
        }
        if &got_dims != dims {
            return Err(r.err(format!("tensor `{name}` has shape {got_dims:?}, expected {dims:?}")));
        }
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let data_start = r.pos;
        let raw = r.take(4 * n, "tensor data")?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            r.pos = data_start + 4 * i;
            return Err(r.err(format!("tensor `{name}` holds a non-finite value")));
        }
        loaded.push(values);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let n_params = net.parameter_names().len();
    let mut it = loaded.into_iter();
    for (dst, src) in net.parameters_mut().into_iter().zip(it.by_ref().take(n_params)) {
        dst.copy_from_slice(&src);
    }
    for bn in net.batch_norms_mut() {
        bn.running_mean = it.next().expect("counted above");
        bn.running_var = it.next().expect("counted above");
        bn.stats_initialized = true;
    }
    Ok(net)
}

pub fn write_model_file(net: &BitplaneNetwork<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, save_model(net))?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<BitplaneNetwork<f32>> {
    load_model(&std::fs::read(path)?)
}
