//! Masks, weights and scores per prunable layer, the PLTS container format,
//! seeded weight initialization, and direct-sparsity bookkeeping.
//!
//! Flat index order is row-major over the weight tensor: `(out, in)` for
//! dense layers and `(out, in/groups, kh, kw)` for conv layers.
//!
//! PLTS layout (little-endian):
//!
//! ```text
//! magic "PLTS" | version u16 = 1 | section count u32
//! per section: name_len u16 | name (UTF-8) | dtype u8 (0 = f64, 1 = u8)
//!              | ndim u8 | dims u32 * ndim | payload
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::arch::ArchGraph;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const MAGIC: &[u8; 4] = b"PLTS";
pub const VERSION: u16 = 1;

/// Binary keep/prune mask per prunable layer (`true` = unpruned).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    layers: Vec<Vec<bool>>,
}

/// Signed weights per prunable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    layers: Vec<Vec<f64>>,
}

/// Non-negative, finite saliency scores per prunable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    layers: Vec<Vec<f64>>,
}

fn check_lengths<T>(arch: &ArchGraph, layers: &[Vec<T>]) -> Result<()> {
    if layers.len() != arch.num_layers() {
        return Err(Error::shape(
            arch.name(),
            format!(
                "expected {} layers, got {}",
                arch.num_layers(),
                layers.len()
            ),
        ));
    }
    for (l, (layer, &n)) in layers.iter().zip(arch.param_counts()).enumerate() {
        if layer.len() != n {
            return Err(Error::shape(
                arch.layer_id(l),
                format!("expected {n} entries, got {}", layer.len()),
            ));
        }
    }
    Ok(())
}

impl MaskSet {
    pub fn new(layers: Vec<Vec<bool>>) -> Self {
        MaskSet { layers }
    }

    pub fn ones(arch: &ArchGraph) -> Self {
        MaskSet {
            layers: arch.param_counts().iter().map(|&n| vec![true; n]).collect(),
        }
    }

    pub fn zeros(arch: &ArchGraph) -> Self {
        MaskSet {
            layers: arch
                .param_counts()
                .iter()
                .map(|&n| vec![false; n])
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[bool] {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [bool] {
        &mut self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn check(&self, arch: &ArchGraph) -> Result<()> {
        check_lengths(arch, &self.layers)
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&m| m).count())
            .collect()
    }

    pub fn pruned_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&m| !m).count())
            .collect()
    }

    pub fn total_kept(&self) -> usize {
        self.kept_counts().iter().sum()
    }

    /// True when every unpruned entry of `self` is also unpruned in `other`.
    pub fn is_subset_of(&self, other: &MaskSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| !x || y))
    }

    pub fn to_file(&self, arch: &ArchGraph) -> TensorFile {
        TensorFile {
            sections: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, m)| Section {
                    name: arch.layer_id(l).to_string(),
                    dims: arch.weight_dims(l),
                    data: TensorData::U8(m.iter().map(|&b| b as u8).collect()),
                })
                .collect(),
        }
    }

    pub fn from_file(file: TensorFile, arch: &ArchGraph) -> Result<Self> {
        let layers = file
            .into_layers(arch)?
            .into_iter()
            .enumerate()
            .map(|(l, data)| match data {
                TensorData::U8(v) => v
                    .into_iter()
                    .map(|b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::Format(format!(
                            "mask layer `{}` contains value {other}",
                            arch.layer_id(l)
                        ))),
                    })
                    .collect::<Result<Vec<bool>>>(),
                TensorData::F64(_) => Err(Error::Format(format!(
                    "mask layer `{}` must have dtype u8",
                    arch.layer_id(l)
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskSet { layers })
    }
}

impl WeightSet {
    pub fn new(layers: Vec<Vec<f64>>) -> Self {
        WeightSet { layers }
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.layers[l]
    }

    pub fn check(&self, arch: &ArchGraph) -> Result<()> {
        check_lengths(arch, &self.layers)?;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.iter().any(|w| !w.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite weight in layer `{}`",
                    arch.layer_id(l)
                )));
            }
        }
        Ok(())
    }

    pub fn to_file(&self, arch: &ArchGraph) -> TensorFile {
        f64_file(arch, &self.layers)
    }

    pub fn from_file(file: TensorFile, arch: &ArchGraph) -> Result<Self> {
        Ok(WeightSet {
            layers: f64_layers(file, arch, "weight")?,
        })
    }
}

impl ScoreSet {
    /// Wrap raw scores; fails on negative or non-finite values.
    pub fn new(layers: Vec<Vec<f64>>) -> Result<Self> {
        for (l, layer) in layers.iter().enumerate() {
            if let Some(v) = layer.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidScores {
                    layer: format!("#{l}"),
                    reason: format!("score {v} is not finite and non-negative"),
                });
            }
        }
        Ok(ScoreSet { layers })
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.layers[l]
    }

    pub fn check(&self, arch: &ArchGraph) -> Result<()> {
        check_lengths(arch, &self.layers)
    }

    pub fn to_file(&self, arch: &ArchGraph) -> TensorFile {
        f64_file(arch, &self.layers)
    }

    pub fn from_file(file: TensorFile, arch: &ArchGraph) -> Result<Self> {
        let layers = f64_layers(file, arch, "score")?;
        for (l, layer) in layers.iter().enumerate() {
            if let Some(v) = layer.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidScores {
                    layer: arch.layer_id(l).to_string(),
                    reason: format!("score {v} is not finite and non-negative"),
                });
            }
        }
        Ok(ScoreSet { layers })
    }
}

fn f64_file(arch: &ArchGraph, layers: &[Vec<f64>]) -> TensorFile {
    TensorFile {
        sections: layers
            .iter()
            .enumerate()
            .map(|(l, v)| Section {
                name: arch.layer_id(l).to_string(),
                dims: arch.weight_dims(l),
                data: TensorData::F64(v.clone()),
            })
            .collect(),
    }
}

fn f64_layers(file: TensorFile, arch: &ArchGraph, what: &str) -> Result<Vec<Vec<f64>>> {
    file.into_layers(arch)?
        .into_iter()
        .enumerate()
        .map(|(l, data)| match data {
            TensorData::F64(v) => Ok(v),
            TensorData::U8(_) => Err(Error::Format(format!(
                "{what} layer `{}` must have dtype f64",
                arch.layer_id(l)
            ))),
        })
        .collect()
}

/// Pruned / total parameter counts. Sparsity and compression are derived
/// from the integer counts with a single division.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsityCount {
    pub pruned: u64,
    pub total: u64,
}

impl SparsityCount {
    pub fn sparsity(&self) -> f64 {
        self.pruned as f64 / self.total as f64
    }

    /// `(1 - s)^-1`; infinite when nothing is left.
    pub fn compression(&self) -> f64 {
        self.total as f64 / (self.total - self.pruned) as f64
    }
}

/// `s(M) = 1 - Σ‖M_ℓ‖₀ / Σ|M_ℓ|`.
pub fn direct_sparsity(mask: &MaskSet) -> SparsityCount {
    let total: usize = mask.layers.iter().map(Vec::len).sum();
    SparsityCount {
        pruned: (total - mask.total_kept()) as u64,
        total: total as u64,
    }
}

/// Kaiming normal initialization with fan-avg: `N(0, 2 / ((fan_in + fan_out) / 2))`.
///
/// Layer `ℓ` draws from stream `ℓ` of the weight generator, in flat index order.
pub fn init_weights(arch: &ArchGraph, seed: u64) -> WeightSet {
    let layers = (0..arch.num_layers())
        .map(|l| {
            let (fan_in, fan_out) = arch.fans(l);
            let std = kaiming_fan_avg_std(fan_in, fan_out);
            let normal = Normal::new(0.0, std).expect("std is positive and finite");
            let mut rng = rng::stream(seed, Purpose::Weights, l as u64);
            (0..arch.param_counts()[l])
                .map(|_| normal.sample(&mut rng))
                .collect()
        })
        .collect();
    WeightSet { layers }
}

pub fn kaiming_fan_avg_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / ((fan_in + fan_out) as f64 / 2.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

/// Raw contents of a PLTS file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub sections: Vec<Section>,
}

impl TensorFile {
    /// Match sections to the architecture's prunable layers by name and check dims.
    fn into_layers(self, arch: &ArchGraph) -> Result<Vec<TensorData>> {
        let mut slots: Vec<Option<TensorData>> = vec![None; arch.num_layers()];
        for s in self.sections {
            let l = arch
                .layer_index(&s.name)
                .ok_or_else(|| Error::shape(&s.name, "no such prunable layer in architecture"))?;
            let expected = arch.weight_dims(l);
            if s.dims != expected {
                return Err(Error::shape(
                    &s.name,
                    format!("dims {:?} do not match architecture {:?}", s.dims, expected),
                ));
            }
            if slots[l].replace(s.data).is_some() {
                return Err(Error::Format(format!("duplicate section `{}`", s.name)));
            }
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(l, s)| {
                s.ok_or_else(|| Error::shape(arch.layer_id(l), "layer missing from file"))
            })
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.sections.len())
            .map_err(|_| Error::Format("too many sections".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for s in &self.sections {
            let name = s.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("section name too long: {}", s.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            let numel: usize = s.dims.iter().product();
            if numel != s.data.len() {
                return Err(Error::Format(format!(
                    "section `{}`: dims {:?} hold {numel} values, payload has {}",
                    s.name,
                    s.dims,
                    s.data.len()
                )));
            }
            out.push(match s.data {
                TensorData::F64(_) => 0,
                TensorData::U8(_) => 1,
            });
            let ndim = u8::try_from(s.dims.len())
                .map_err(|_| Error::Format(format!("section `{}` has too many dims", s.name)))?;
            out.push(ndim);
            for &d in &s.dims {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Format(format!("section `{}` dim too large", s.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &s.data {
                TensorData::F64(v) => {
                    out.reserve(v.len() * 8);
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected PLTS".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("section `{name}` is too large")))?;
            let data = match dtype {
                0 => {
                    let raw = r.take(numel.checked_mul(8).ok_or_else(|| {
                        Error::Format(format!("section `{name}` is too large"))
                    })?)?;
                    TensorData::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                1 => TensorData::U8(r.take(numel)?.to_vec()),
                other => {
                    return Err(Error::Format(format!(
                        "section `{name}` has unknown dtype {other}"
                    )))
                }
            };
            sections.push(Section { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last section",
                bytes.len() - r.pos
            )));
        }
        Ok(TensorFile { sections })
    }
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
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<TensorFile> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    TensorFile::decode(&bytes)
}

pub fn write_tensors(file: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = file.encode()?;
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::zoo::builtin_arch;

    fn toy() -> ArchGraph {
        ArchGraph::parse(
            r#"{"name":"t","nodes":[
            {"id":"x","kind":"input","units":2},
            {"id":"a","kind":"dense","inputs":["x"],"in_units":2,"out_units":3},
            {"id":"b","kind":"dense","inputs":["a"],"in_units":3,"out_units":2},
            {"id":"y","kind":"output","inputs":["b"]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn direct_sparsity_extremes() {
        let g = toy();
        assert_eq!(direct_sparsity(&MaskSet::ones(&g)).sparsity(), 0.0);
        assert_eq!(direct_sparsity(&MaskSet::zeros(&g)).sparsity(), 1.0);
        assert!(direct_sparsity(&MaskSet::zeros(&g))
            .compression()
            .is_infinite());
    }

    #[test]
    fn direct_sparsity_counts() {
        let m = MaskSet::new(vec![vec![true; 10], vec![false; 11]]);
        let s = direct_sparsity(&m);
        assert_eq!((s.pruned, s.total), (11, 21));
        assert_eq!(s.sparsity(), 11.0 / 21.0);
        assert_eq!(s.compression(), 2.1);
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let g = builtin_arch("lenet5").unwrap();
        let a = init_weights(&g, 3);
        assert_eq!(a, init_weights(&g, 3));
        assert_ne!(a, init_weights(&g, 4));
        a.check(&g).unwrap();
    }

    #[test]
    fn init_std_formula() {
        assert_eq!(kaiming_fan_avg_std(2, 2), 1.0);
        assert_eq!(kaiming_fan_avg_std(27, 144), (2.0f64 / 85.5).sqrt());
    }

    #[test]
    fn bad_magic_and_version() {
        let g = toy();
        let mut bytes = MaskSet::ones(&g).to_file(&g).encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TensorFile::decode(&bad), Err(Error::Format(_))));
        bytes[4] = 2;
        let err = TensorFile::decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_and_trailing() {
        let g = toy();
        let bytes = MaskSet::ones(&g).to_file(&g).encode().unwrap();
        assert!(TensorFile::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(TensorFile::decode(&extra).is_err());
    }

    #[test]
    fn mask_shape_mismatch_names_layer() {
        let g = toy();
        let mut file = MaskSet::ones(&g).to_file(&g);
        file.sections[1].dims = vec![2, 2];
        file.sections[1].data = TensorData::U8(vec![1; 4]);
        match MaskSet::from_file(file, &g).unwrap_err() {
            Error::Shape { layer, .. } => assert_eq!(layer, "b"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn mask_values_must_be_binary() {
        let g = toy();
        let mut file = MaskSet::ones(&g).to_file(&g);
        file.sections[0].data = TensorData::U8(vec![1, 2, 1, 1, 1, 1]);
        assert!(matches!(
            MaskSet::from_file(file, &g),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn scores_reject_non_finite() {
        let g = toy();
        let mut file = WeightSet::new(vec![vec![1.0; 6], vec![1.0; 6]]).to_file(&g);
        file.sections[1].data = TensorData::F64(vec![1.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]);
        match ScoreSet::from_file(file, &g).unwrap_err() {
            Error::InvalidScores { layer, .. } => assert_eq!(layer, "b"),
            e => panic!("{e}"),
        }
        assert!(ScoreSet::new(vec![vec![-1.0]]).is_err());
    }

    #[test]
    fn file_round_trip_on_disk() {
        let g = builtin_arch("lenet5").unwrap();
        let w = init_weights(&g, 11);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.plts");
        write_tensors(&w.to_file(&g), &p).unwrap();
        let back = WeightSet::from_file(read_tensors(&p).unwrap(), &g).unwrap();
        assert!(w
            .layers()
            .iter()
            .flatten()
            .zip(back.layers().iter().flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
