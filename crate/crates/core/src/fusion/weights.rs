//! Binary parameter container.
//!
//! Layout, all integers little-endian: the 8-byte magic, a `u32` version, a `u32` entry count,
//! then per entry a `u32` name length and UTF-8 name, a `u32` rank, `rank` `u64` extents, and
//! the `f64` payload. Every convolution contributes a `<name>.weight` entry of rank 4 followed
//! by a `<name>.bias` entry of rank 1, in the network's parameter order.

use std::io::{Read, Write};
use std::path::Path;

use super::net::{AdfNetToy, NetConfig, LEVELS};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"SALBWTS\0";
pub const WEIGHTS_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_entry(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len() as u32);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_weights(net: &AdfNetToy, mut w: impl Write) -> std::io::Result<()> {
    let convs = net.named_convs();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION);
    put_u32(&mut out, (convs.len() * 2) as u32);
    for (name, c) in &convs {
        put_entry(&mut out, &format!("{name}.weight"), &c.weight.dims(), c.weight.data());
        put_entry(&mut out, &format!("{name}.bias"), &[c.bias.len()], &c.bias);
    }
    w.write_all(&out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn parse_entries(buf: &[u8]) -> std::result::Result<Vec<Entry>, String> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(8)? != WEIGHTS_MAGIC {
        return Err("not a weights file (bad magic)".into());
    }
    let version = cur.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| "entry name is not UTF-8".to_string())?
            .to_string();
        let rank = cur.u32()? as usize;
        if rank > 4 {
            return Err(format!("{name}: rank {rank} is too large"));
        }
        let dims = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("{name}: payload size overflows"))?;
        let bytes = cur.take(len.checked_mul(8).ok_or("payload size overflows")?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        entries.push(Entry { name, dims, data });
    }
    if cur.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - cur.pos));
    }
    Ok(entries)
}

/// Recovers the network configuration from the shapes stored in the file.
fn infer_config(entries: &[Entry]) -> std::result::Result<NetConfig, String> {
    let find = |name: &str| -> std::result::Result<&[usize], String> {
        entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.dims.as_slice())
            .ok_or_else(|| format!("missing entry {name}"))
    };
    let rank4 = |name: &str| -> std::result::Result<[usize; 4], String> {
        find(name)?
            .try_into()
            .map_err(|_| format!("{name}: expected a rank-4 weight"))
    };
    let mut channels = [0; LEVELS];
    for (i, c) in channels.iter_mut().enumerate() {
        *c = rank4(&format!("rgb.block{}.conv1.weight", i + 1))?[0];
    }
    let rgb_channels = rank4("rgb.block1.conv1.weight")?[1];
    let thermal_channels = rank4("thermal.block1.conv1.weight")?[1];
    let hidden = rank4("rgb.cbam1.ca_reduce.weight")?[0];
    if hidden == 0 || channels[0] % hidden != 0 {
        return Err(format!("attention width {hidden} does not divide {} channels", channels[0]));
    }
    let spatial_kernel = rank4("rgb.cbam1.sa_conv.weight")?[2];
    Ok(NetConfig {
        channels,
        reduction: channels[0] / hidden,
        spatial_kernel,
        rgb_channels,
        thermal_channels,
    })
}

pub fn read_weights(mut r: impl Read, origin: &Path) -> Result<AdfNetToy> {
    let format = |message: String| Error::Format {
        path: origin.to_path_buf(),
        message,
    };
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(origin, e))?;
    let entries = parse_entries(&buf).map_err(format)?;
    let config = infer_config(&entries).map_err(format)?;
    config.validate()?;
    let template = AdfNetToy::init(&config, 0)?;
    let slots = template.named_convs();
    if entries.len() != slots.len() * 2 {
        return Err(format(format!(
            "expected {} entries, found {}",
            slots.len() * 2,
            entries.len()
        )));
    }
    let mut convs = Vec::with_capacity(slots.len());
    for ((name, slot), pair) in slots.iter().zip(entries.chunks_exact(2)) {
        let (w, b) = (&pair[0], &pair[1]);
        if w.name != format!("{name}.weight") || b.name != format!("{name}.bias") {
            return Err(format(format!(
                "expected {name}.weight/{name}.bias, found {}/{}",
                w.name, b.name
            )));
        }
        if w.dims != slot.weight.dims() || b.dims != [slot.bias.len()] {
            return Err(format(format!("{name}: stored shape {:?} does not fit the network", w.dims)));
        }
        let weight = Tensor::new(slot.weight.dims(), w.data.clone())?;
        convs.push(ConvParams::new(weight, b.data.clone(), slot.stride, slot.padding)?);
    }
    AdfNetToy::from_convs(&config, convs)
}

pub fn save_weights(net: &AdfNetToy, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_weights(net, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<AdfNetToy> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(std::io::BufReader::new(file), path)
}
