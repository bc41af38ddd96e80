//! Named parameter tensors and the `CSIP` binary parameter format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CSIP" | u32 version | u32 tensor count
//! per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 data (row-major)
//! ```

use indexmap::IndexMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"CSIP";
pub const PARAM_VERSION: u32 = 1;

const RUNNING_SUFFIXES: [&str; 2] = [".running_mean", ".running_var"];

/// Named tensors in insertion order. Batch-norm running statistics are
/// stored alongside the weights but are not trainable.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<T: Scalar = f32> {
    entries: IndexMap<String, Tensor<T>>,
}

/// Canonical 32-bit parameter set.
pub type ParameterSet = Params<f32>;

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::ParamMismatch(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter().filter(|(k, _)| is_trainable(k))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across trainable tensors.
    pub fn count_params(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    /// Scalar count across every stored tensor, including running statistics.
    pub fn stored_elements(&self) -> usize {
        self.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Zero tensors for every trainable entry (a gradient-shaped set).
    pub fn zeros_like_trainable(&self) -> Self {
        Self {
            entries: self
                .trainable()
                .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

pub fn is_trainable(name: &str) -> bool {
    !RUNNING_SUFFIXES.iter().any(|s| name.ends_with(s))
}

/// Free-function form of [`Params::count_params`].
pub fn count_params<T: Scalar>(params: &Params<T>) -> usize {
    params.count_params()
}

/// Bytes of the format that are not tensor payload for this parameter set.
pub fn header_overhead(params: &ParameterSet) -> usize {
    12 + params
        .iter()
        .map(|(name, t)| 2 + name.len() + 1 + 4 * t.rank())
        .sum::<usize>()
}

pub fn serialize_params(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_overhead(params) + 4 * params.stored_elements());
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                "parameter file",
                format!("truncated at byte {} (wanted {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ParameterSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != PARAM_MAGIC {
        return Err(Error::format("parameter file", "bad magic"));
    }
    let version = r.u32()?;
    if version != PARAM_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "parameter file",
            found: version,
            expected: PARAM_VERSION,
        });
    }
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::format("parameter file", format!("tensor name: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::format("parameter file", "tensor size overflows"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params
            .insert(name, Tensor::new(shape, data))
            .map_err(|e| Error::format("parameter file", e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            "parameter file",
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conv_152() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(
            "0.weight",
            Tensor::from_fn(&[8, 2, 3, 3], |i| i as f32 * 0.5),
        )
        .unwrap();
        p.insert("0.bias", Tensor::from_fn(&[8], |i| -(i as f32)))
            .unwrap();
        p
    }

    #[test]
    fn conv_layer_payload_is_608_bytes() {
        let p = conv_152();
        assert_eq!(p.count_params(), 152);
        let bytes = serialize_params(&p);
        assert_eq!(bytes.len() - header_overhead(&p), 608);
    }

    #[test]
    fn empty_set_counts_zero() {
        assert_eq!(ParameterSet::new().count_params(), 0);
        let bytes = serialize_params(&ParameterSet::new());
        assert_eq!(bytes.len(), 12);
        assert!(deserialize_params(&bytes).unwrap().is_empty());
    }

    #[test]
    fn running_stats_are_not_trainable() {
        let mut p = conv_152();
        p.insert("1.running_mean", Tensor::zeros(&[8])).unwrap();
        p.insert("1.running_var", Tensor::ones(&[8])).unwrap();
        assert_eq!(p.count_params(), 152);
        assert_eq!(p.stored_elements(), 168);
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let bytes = serialize_params(&conv_152());
        for cut in [0, 3, 10, 20, bytes.len() - 1] {
            let err = deserialize_params(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = serialize_params(&conv_152());
        bytes[4] = 9;
        assert!(matches!(
            deserialize_params(&bytes),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            deserialize_params(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = conv_152();
        assert!(p.insert("0.bias", Tensor::zeros(&[1])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 0..4), any::<u32>()),
                0..6,
            )
        ) {
            let mut p = ParameterSet::new();
            for (i, (shape, seed)) in tensors.iter().enumerate() {
                let mut s = *seed;
                let t = Tensor::from_fn(shape, |_| {
                    s = s.wrapping_mul(1664525).wrapping_add(1013904223);
                    f32::from_bits(s)
                });
                p.insert(format!("t{i}.weight"), t).unwrap();
            }
            let back = deserialize_params(&serialize_params(&p)).unwrap();
            prop_assert_eq!(back.len(), p.len());
            for ((n1, a), (n2, b)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(a.shape(), b.shape());
                let ab: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
