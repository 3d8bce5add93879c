//! Binary network checkpoints.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! "RSC1" | version | spec length | spec text
//! repeated until EOF: name length | name | rank | extents... | f64 values (LE, row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSC1";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(net: &Network) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = net.spec().to_text();
    put_u32(&mut out, spec.len())?;
    out.extend_from_slice(spec.as_bytes());
    for (name, t) in net.param_names().iter().zip(net.params()) {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &e in t.shape() {
            put_u32(&mut out, e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let spec_len = r.u32("spec length")?;
    let spec_at = r.pos as u64;
    let spec_text = std::str::from_utf8(r.take(spec_len, "network spec")?)
        .map_err(|_| Error::format(spec_at, "network spec is not UTF-8"))?;
    let spec = NetworkSpec::from_text(spec_text).map_err(|e| Error::format(spec_at, format!("invalid network spec: {e}")))?;
    let expected = spec.param_shapes();
    let mut named = Vec::with_capacity(expected.len());
    while !r.at_end() {
        let entry_at = r.pos as u64;
        let name_len = r.u32("parameter name length")?;
        let name = String::from_utf8(r.take(name_len, "parameter name")?.to_vec())
            .map_err(|_| Error::format(entry_at, "parameter name is not UTF-8"))?;
        let rank = r.u32("parameter rank")?;
        if rank > 8 {
            return Err(Error::format(entry_at, format!("parameter {name} has implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("parameter extent")).collect::<Result<Vec<_>>>()?;
        let Some((ename, eshape)) = expected.get(named.len()) else {
            return Err(Error::format(entry_at, format!("unexpected extra parameter {name}")));
        };
        if *ename != name {
            return Err(Error::format(entry_at, format!("expected parameter {ename}, found {name}")));
        }
        if *eshape != shape {
            return Err(Error::format(
                entry_at,
                format!("parameter {name} has shape {shape:?}, spec requires {eshape:?}"),
            ));
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * 8, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if named.len() != expected.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("checkpoint holds {} of {} parameters", named.len(), expected.len()),
        ));
    }
    Network::from_parts(spec, named)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    Ok(fs::write(path, encode(net)?)?)
}

pub fn load(path: &Path) -> Result<Network> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{classifier_spec, roi_spec};

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::init(classifier_spec(3, 3, 32).unwrap(), 9).unwrap();
        let back = decode(&encode(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode(&Network::init(roi_spec(), 1).unwrap()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode(&Network::init(roi_spec(), 1).unwrap()).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
    }

    #[test]
    fn shape_disagreement_names_parameter() {
        let net = Network::init(classifier_spec(3, 3, 32).unwrap(), 9).unwrap();
        let mut bytes = encode(&net).unwrap();
        // first entry: name length, name, rank, then the first extent
        let spec_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let entry = 12 + spec_len;
        let name_len = u32::from_le_bytes(bytes[entry..entry + 4].try_into().unwrap()) as usize;
        let first_extent = entry + 4 + name_len + 4;
        bytes[first_extent] = 17;
        match decode(&bytes) {
            Err(Error::Format { msg, .. }) => assert!(msg.contains("b1_conv1.weight"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
