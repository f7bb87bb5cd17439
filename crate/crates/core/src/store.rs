//! On-disk expert catalog and timed loading of active experts.
//!
//! Adapter file layout (all integers and reals little-endian):
//!
//! ```text
//! "TTMM"  u16 version  [u8; 32] base fingerprint  u32 n_matrices
//! per matrix:
//!     u32 name_len  name bytes (UTF-8)  u32 d_out  u32 d_in  u32 r  f32 alpha
//!     A: r * d_in f32 (row-major)   B: d_out * r f32 (row-major)
//! u64 FNV-1a checksum of every preceding byte
//! ```
//!
//! A catalog directory holds `manifest.toml`, `base.json` and
//! `adapters/expert_NNNN.ttmm`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lm::{BaseParams, LoraAdapter, LoraFactors};
use crate::merge::{merge_adapters, MergedAdapter};
use crate::router::{route, MergeWeights, RoutingConfig};

pub const MAGIC: &[u8; 4] = b"TTMM";
pub const FORMAT_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BASE_FILE: &str = "base.json";
pub const ADAPTER_DIR: &str = "adapters";

const HEADER_LEN: usize = 4 + 2 + 32 + 4;
const CHECKSUM_LEN: usize = 8;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Exact serialized size of `adapter`.
pub fn encoded_len(adapter: &LoraAdapter) -> usize {
    HEADER_LEN
        + adapter
            .factors
            .iter()
            .map(|f| 4 + f.name.len() + 3 * 4 + 4 + 4 * (f.a.data.len() + f.b.data.len()))
            .sum::<usize>()
        + CHECKSUM_LEN
}

pub fn encode_adapter(adapter: &LoraAdapter, base_fingerprint: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(adapter));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(base_fingerprint);
    out.extend_from_slice(&(adapter.factors.len() as u32).to_le_bytes());
    for f in &adapter.factors {
        out.extend_from_slice(&(f.name.len() as u32).to_le_bytes());
        out.extend_from_slice(f.name.as_bytes());
        for d in [f.d_out(), f.d_in(), f.rank()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&f.alpha.to_le_bytes());
        for v in f.a.data.iter().chain(&f.b.data) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptAdapter("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptAdapter("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Parses adapter bytes, returning the recorded base fingerprint and the
/// adapter. The checksum is verified before anything else is read.
pub fn decode_adapter(bytes: &[u8]) -> Result<([u8; 32], LoraAdapter)> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(Error::CorruptAdapter(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a64(body) != stored {
        return Err(Error::CorruptAdapter("checksum mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::CorruptAdapter("bad magic".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CorruptAdapter(format!("unsupported version {version}")));
    }
    let fingerprint: [u8; 32] = c.take(32)?.try_into().expect("32 bytes");
    let n = c.u32()? as usize;
    let mut factors = Vec::new();
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::CorruptAdapter("matrix name is not UTF-8".into()))?
            .to_string();
        let d_out = c.u32()? as usize;
        let d_in = c.u32()? as usize;
        let r = c.u32()? as usize;
        let alpha = f32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
        let a = Matrix::from_vec(r, d_in, c.f32s(r.saturating_mul(d_in))?);
        let b = Matrix::from_vec(d_out, r, c.f32s(d_out.saturating_mul(r))?);
        let f = LoraFactors { name, a, b, alpha };
        f.validate().map_err(|e| Error::CorruptAdapter(e.to_string()))?;
        factors.push(f);
    }
    if c.pos != body.len() {
        return Err(Error::CorruptAdapter("trailing bytes after last matrix".into()));
    }
    Ok((fingerprint, LoraAdapter { factors }))
}

/// Writes the adapter and returns the number of bytes written.
pub fn save_adapter(adapter: &LoraAdapter, base_fingerprint: &[u8; 32], path: &Path) -> Result<u64> {
    let bytes = encode_adapter(adapter, base_fingerprint);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

/// Reads an adapter, optionally requiring a specific base fingerprint.
pub fn load_adapter(path: &Path, expected_base: Option<&[u8; 32]>) -> Result<LoraAdapter> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (fp, adapter) = decode_adapter(&bytes)?;
    if expected_base.is_some_and(|e| *e != fp) {
        return Err(Error::FingerprintMismatch { path: path.to_path_buf() });
    }
    Ok(adapter)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex32(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return Err(Error::Catalog(format!("bad fingerprint {s:?}")));
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| Error::Catalog(format!("bad fingerprint {s:?}")))?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub id: usize,
    pub cluster_size: usize,
    /// Relative to the catalog directory.
    pub adapter_path: String,
    pub byte_size: u64,
    /// FNV-1a checksum stored in the adapter trailer, as 16 hex digits.
    pub checksum: String,
    pub centroid: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub embedder: String,
    pub base_fingerprint: String,
    pub experts: Vec<ExpertRecord>,
}

/// Source of adapter bytes; tests substitute a counting reader.
pub trait BlobReader: Sync {
    fn read(&self, path: &Path) -> std::io::Result<Vec<u8>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FsReader;

impl BlobReader for FsReader {
    fn read(&self, path: &Path) -> std::io::Result<Vec<u8>> {
        fs::read(path)
    }
}

/// Routable index over a catalog directory.
#[derive(Clone, Debug)]
pub struct ExpertCatalog {
    dir: PathBuf,
    manifest: Manifest,
    centroids: Vec<EmbeddingVector>,
    base_fingerprint: [u8; 32],
}

impl ExpertCatalog {
    /// Writes a complete catalog (base, adapters, manifest) into `dir`.
    pub fn write(
        dir: &Path,
        base: &BaseParams,
        adapters: &[LoraAdapter],
        centroids: &[EmbeddingVector],
        cluster_sizes: &[usize],
        embedder: &str,
    ) -> Result<Self> {
        if adapters.is_empty() || adapters.len() != centroids.len() || adapters.len() != cluster_sizes.len() {
            return Err(Error::Catalog(format!(
                "{} adapters, {} centroids, {} sizes",
                adapters.len(),
                centroids.len(),
                cluster_sizes.len()
            )));
        }
        let adir = dir.join(ADAPTER_DIR);
        fs::create_dir_all(&adir).map_err(|e| Error::io(&adir, e))?;
        let fp = base.fingerprint();
        let base_path = dir.join(BASE_FILE);
        let base_json = serde_json::to_vec(base).map_err(|e| Error::Catalog(e.to_string()))?;
        fs::write(&base_path, base_json).map_err(|e| Error::io(&base_path, e))?;
        let mut experts = Vec::with_capacity(adapters.len());
        for (id, adapter) in adapters.iter().enumerate() {
            let rel = format!("{ADAPTER_DIR}/expert_{id:04}.ttmm");
            let bytes = encode_adapter(adapter, &fp);
            let path = dir.join(&rel);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            let sum = u64::from_le_bytes(bytes[bytes.len() - CHECKSUM_LEN..].try_into().expect("8 bytes"));
            experts.push(ExpertRecord {
                id,
                cluster_size: cluster_sizes[id],
                adapter_path: rel,
                byte_size: bytes.len() as u64,
                checksum: format!("{sum:016x}"),
                centroid: centroids[id].as_slice().to_vec(),
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            embedder: embedder.to_string(),
            base_fingerprint: hex(&fp),
            experts,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Catalog(e.to_string()))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            centroids: centroids.to_vec(),
            base_fingerprint: fp,
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Catalog(e.to_string()))?;
        Self::from_manifest(dir, manifest)
    }

    fn from_manifest(dir: &Path, manifest: Manifest) -> Result<Self> {
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Catalog(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.experts.is_empty() {
            return Err(Error::Catalog("catalog has no experts".into()));
        }
        let mut centroids = Vec::with_capacity(manifest.experts.len());
        for (i, r) in manifest.experts.iter().enumerate() {
            if r.id != i {
                return Err(Error::Catalog(format!("expert ids not dense: position {i} holds id {}", r.id)));
            }
            if r.cluster_size == 0 {
                return Err(Error::Catalog(format!("expert {i} has empty cluster")));
            }
            centroids.push(EmbeddingVector::from_unit(r.centroid.clone())?);
        }
        let base_fingerprint = unhex32(&manifest.base_fingerprint)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            centroids,
            base_fingerprint,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[EmbeddingVector] {
        &self.centroids
    }

    pub fn base_fingerprint(&self) -> &[u8; 32] {
        &self.base_fingerprint
    }

    pub fn adapter_path(&self, id: usize) -> Result<PathBuf> {
        self.manifest
            .experts
            .get(id)
            .map(|r| self.dir.join(&r.adapter_path))
            .ok_or(Error::MissingAdapter(id))
    }

    /// Loads the base model and checks it against the manifest fingerprint.
    pub fn load_base(&self) -> Result<BaseParams> {
        let path = self.dir.join(BASE_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let base: BaseParams = serde_json::from_slice(&bytes).map_err(|e| Error::Catalog(format!("{}: {e}", path.display())))?;
        if base.fingerprint() != self.base_fingerprint {
            return Err(Error::FingerprintMismatch { path });
        }
        Ok(base)
    }

    /// Reads and verifies one expert through `reader`.
    pub fn load_expert_with<R: BlobReader + ?Sized>(&self, id: usize, reader: &R) -> Result<(LoraAdapter, u64)> {
        let record = self.manifest.experts.get(id).ok_or(Error::MissingAdapter(id))?;
        let path = self.dir.join(&record.adapter_path);
        let bytes = reader.read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingAdapterFile { id, path: path.clone() },
            _ => Error::io(&path, e),
        })?;
        if bytes.len() as u64 != record.byte_size {
            return Err(Error::CorruptAdapter(format!(
                "{}: {} bytes, manifest says {}",
                path.display(),
                bytes.len(),
                record.byte_size
            )));
        }
        let (fp, adapter) = decode_adapter(&bytes)?;
        let sum = u64::from_le_bytes(bytes[bytes.len() - CHECKSUM_LEN..].try_into().expect("8 bytes"));
        if format!("{sum:016x}") != record.checksum {
            return Err(Error::CorruptAdapter(format!("{}: checksum differs from manifest", path.display())));
        }
        if fp != self.base_fingerprint {
            return Err(Error::FingerprintMismatch { path });
        }
        Ok((adapter, bytes.len() as u64))
    }

    pub fn load_expert(&self, id: usize) -> Result<LoraAdapter> {
        self.load_expert_with(id, &FsReader).map(|r| r.0)
    }

    pub fn load_all(&self) -> Result<Vec<LoraAdapter>> {
        (0..self.k()).map(|id| self.load_expert(id)).collect()
    }
}

/// Select/load/merge timings of one routed request.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub select: Duration,
    pub load: Duration,
    pub merge: Duration,
    pub n_active: usize,
    pub bytes_loaded: u64,
}

/// Loads exactly the experts in the support of `weights`.
pub fn load_active<R: BlobReader + ?Sized>(
    catalog: &ExpertCatalog,
    weights: &MergeWeights,
    reader: &R,
) -> Result<(BTreeMap<usize, LoraAdapter>, LatencyReport)> {
    let start = Instant::now();
    let mut out = BTreeMap::new();
    let mut bytes = 0;
    for id in weights.support() {
        let (a, n) = catalog.load_expert_with(id, reader)?;
        bytes += n;
        out.insert(id, a);
    }
    let report = LatencyReport {
        load: start.elapsed(),
        n_active: out.len(),
        bytes_loaded: bytes,
        ..LatencyReport::default()
    };
    Ok((out, report))
}

/// Route, load and merge, timing each phase separately.
pub fn timed_route_merge<R: BlobReader + ?Sized>(
    catalog: &ExpertCatalog,
    query: &EmbeddingVector,
    cfg: &RoutingConfig,
    reader: &R,
) -> Result<(MergedAdapter, LatencyReport)> {
    let t0 = Instant::now();
    let weights = route(query, catalog.centroids(), cfg)?;
    let select = t0.elapsed();
    let (adapters, mut report) = load_active(catalog, &weights, reader)?;
    let t1 = Instant::now();
    let merged = merge_adapters(&weights, &adapters)?;
    report.merge = t1.elapsed();
    report.select = select;
    Ok((merged, report))
}

pub fn median_duration(mut v: Vec<Duration>) -> Duration {
    if v.is_empty() {
        return Duration::ZERO;
    }
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// One `(tau, beta)` cell of a latency sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub tau: f64,
    pub beta: f64,
    pub repetitions: usize,
    pub select_median: Duration,
    pub load_median: Duration,
    pub merge_median: Duration,
    /// Mean number of active experts over the query set.
    pub n_active_mean: f64,
    pub bytes_loaded_mean: f64,
}

/// Runs `timed_route_merge` over every query for `repetitions` rounds and
/// reports per-phase medians of the per-round mean durations.
pub fn latency_sweep<R: BlobReader + ?Sized>(
    catalog: &ExpertCatalog,
    queries: &[EmbeddingVector],
    taus: &[f64],
    betas: &[f64],
    repetitions: usize,
    reader: &R,
) -> Result<Vec<BenchRow>> {
    if queries.is_empty() || repetitions == 0 {
        return Err(Error::Config("latency sweep needs queries and repetitions >= 1".into()));
    }
    let mut rows = Vec::with_capacity(taus.len() * betas.len());
    for &beta in betas {
        for &tau in taus {
            let cfg = RoutingConfig {
                beta,
                tau,
                ..RoutingConfig::default()
            };
            let (mut sel, mut load, mut merge) = (Vec::new(), Vec::new(), Vec::new());
            let (mut active, mut bytes) = (0usize, 0u64);
            for _ in 0..repetitions {
                let (mut s, mut l, mut m) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
                active = 0;
                bytes = 0;
                for q in queries {
                    let (_, r) = timed_route_merge(catalog, q, &cfg, reader)?;
                    s += r.select;
                    l += r.load;
                    m += r.merge;
                    active += r.n_active;
                    bytes += r.bytes_loaded;
                }
                let n = queries.len() as u32;
                sel.push(s / n);
                load.push(l / n);
                merge.push(m / n);
            }
            rows.push(BenchRow {
                tau,
                beta,
                repetitions,
                select_median: median_duration(sel),
                load_median: median_duration(load),
                merge_median: median_duration(merge),
                n_active_mean: active as f64 / queries.len() as f64,
                bytes_loaded_mean: bytes as f64 / queries.len() as f64,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lm::{LoraConfig, ModelConfig, Vocab};

    fn base() -> BaseParams {
        BaseParams::init(
            Vocab::new("abcdefgh".chars()),
            &ModelConfig {
                hidden: 8,
                ..ModelConfig::default()
            },
        )
    }

    fn adapter(base: &BaseParams, seed: u64) -> LoraAdapter {
        let mut a = LoraAdapter::init(base, &LoraConfig { rank: 3, ..LoraConfig::default() }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in &mut a.factors {
            f.b = Matrix::gaussian(f.b.rows, f.b.cols, 0.1, &mut rng);
        }
        a
    }

    fn centroids(k: usize, seed: u64) -> Vec<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| EmbeddingVector::normalized(&(0..16).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()).unwrap())
            .collect()
    }

    fn catalog(dir: &Path, k: usize) -> (BaseParams, Vec<LoraAdapter>, ExpertCatalog) {
        let b = base();
        let adapters: Vec<_> = (0..k as u64).map(|s| adapter(&b, s)).collect();
        let sizes: Vec<usize> = (1..=k).collect();
        let cat = ExpertCatalog::write(dir, &b, &adapters, &centroids(k, 9), &sizes, "test-embedder").unwrap();
        (b, adapters, cat)
    }

    struct Counting(AtomicUsize);

    impl BlobReader for Counting {
        fn read(&self, path: &Path) -> std::io::Result<Vec<u8>> {
            self.0.fetch_add(1, Ordering::SeqCst);
            fs::read(path)
        }
    }

    #[test]
    fn adapter_round_trip_is_bitwise() {
        let b = base();
        let a = adapter(&b, 1);
        let fp = b.fingerprint();
        let bytes = encode_adapter(&a, &fp);
        assert_eq!(bytes.len(), encoded_len(&a));
        let (fp2, back) = decode_adapter(&bytes).unwrap();
        assert_eq!(fp2, fp);
        assert_eq!(encode_adapter(&back, &fp), bytes);
        let bits = |x: &LoraAdapter| x.flatten().iter().map(|v| (*v as f32).to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&a));
    }

    #[test]
    fn byte_count_from_shapes() {
        let b = base();
        let a = adapter(&b, 2);
        // V = 10, h = 8, r = 3; matrices block.0, block.1 (8x8) and out_proj (10x8)
        let per = |name: &str, d_out: usize, d_in: usize| 4 + name.len() + 12 + 4 + 4 * (3 * d_in + d_out * 3);
        let expect = 4 + 2 + 32 + 4 + per("block.0", 8, 8) + per("block.1", 8, 8) + per("out_proj", 10, 8) + 8;
        assert_eq!(encode_adapter(&a, &[0; 32]).len(), expect);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let b = base();
        let bytes = encode_adapter(&adapter(&b, 3), &b.fingerprint());
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut c = bytes.clone();
                c[i] ^= 1 << bit;
                assert!(matches!(decode_adapter(&c), Err(Error::CorruptAdapter(_))), "byte {i} bit {bit}");
            }
        }
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_adapter(&bytes[..cut]), Err(Error::CorruptAdapter(_))));
        }
    }

    #[test]
    fn fingerprint_is_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let b = base();
        let path = dir.path().join("a.ttmm");
        save_adapter(&adapter(&b, 4), &b.fingerprint(), &path).unwrap();
        assert!(load_adapter(&path, Some(&b.fingerprint())).is_ok());
        assert!(matches!(load_adapter(&path, Some(&[7; 32])), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn catalog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (b, adapters, cat) = catalog(dir.path(), 4);
        let again = ExpertCatalog::open(dir.path()).unwrap();
        assert_eq!(again.manifest(), cat.manifest());
        assert_eq!(again.centroids(), cat.centroids());
        assert_eq!(again.load_base().unwrap(), b);
        assert_eq!(again.load_all().unwrap(), adapters);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(toml::to_string(again.manifest()).unwrap(), text);
    }

    #[test]
    fn load_active_reads_only_the_support() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, cat) = catalog(dir.path(), 8);
        let w = MergeWeights::new(vec![(0, 0.2), (2, 0.2), (3, 0.2), (5, 0.2), (7, 0.2)]).unwrap();
        let reader = Counting(AtomicUsize::new(0));
        let (loaded, report) = load_active(&cat, &w, &reader).unwrap();
        assert_eq!(reader.0.load(Ordering::SeqCst), 5);
        assert_eq!(loaded.keys().copied().collect::<Vec<_>>(), vec![0, 2, 3, 5, 7]);
        let expect: u64 = w.support().iter().map(|&i| cat.manifest().experts[i].byte_size).sum();
        assert_eq!(report.bytes_loaded, expect);
        assert_eq!(report.n_active, 5);
    }

    #[test]
    fn missing_adapter_file_names_the_expert() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, cat) = catalog(dir.path(), 3);
        fs::remove_file(cat.adapter_path(1).unwrap()).unwrap();
        assert!(matches!(
            load_active(&cat, &MergeWeights::one_hot(1), &FsReader),
            Err(Error::MissingAdapterFile { id: 1, .. })
        ));
    }

    #[test]
    fn corrupted_catalog_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, cat) = catalog(dir.path(), 3);
        let p = cat.adapter_path(2).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[60] ^= 0x10;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(cat.load_expert(2), Err(Error::CorruptAdapter(_))));
        let mut b2 = base();
        b2.out_proj.bias[0] = 1.0;
        fs::write(dir.path().join(BASE_FILE), serde_json::to_vec(&b2).unwrap()).unwrap();
        assert!(matches!(cat.load_base(), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn timed_merge_reports_phases() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, cat) = catalog(dir.path(), 6);
        let q = cat.centroids()[2].clone();
        let cfg = RoutingConfig { beta: 0.5, tau: 0.05, ..RoutingConfig::default() };
        let (merged, r) = timed_route_merge(&cat, &q, &cfg, &FsReader).unwrap();
        assert_eq!(r.n_active, merged.weights.n_active());
        let rows = latency_sweep(&cat, &[q], &[0.0, 0.05, 0.1, 0.15], &[0.5], 3, &FsReader).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|w| w[1].n_active_mean <= w[0].n_active_mean));
    }

    #[test]
    fn median_of_durations() {
        let d = Duration::from_millis;
        assert_eq!(median_duration(vec![d(3), d(1), d(2)]), d(2));
        assert_eq!(median_duration(vec![d(4), d(1), d(2), d(3)]), Duration::from_micros(2500));
    }
}
