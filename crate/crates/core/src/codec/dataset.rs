//! Patch datasets of (original, reconstruction) pairs.
//!
//! On disk a store is a directory holding `manifest.csv` plus one sample
//! file per (image, QP) under `train/` or `val/`. Each sample file starts
//! with the ASCII line `QSIM1 <patch> <qp> <count>` followed by, for every
//! patch in turn, one `(original, recon)` byte pair per pixel in row-major
//! order.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::image::{read_pgm, GrayImage};
use super::quant::{encode_decode, QuantizerConfig};
use super::synth::synthetic_image;
use crate::error::{Error, Result};

pub const STORE_MAGIC: &str = "QSIM1";
const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "split,image,qp,width,height,count,rate_bits";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic { seed: u64, count: usize, size: usize },
    /// Every `*.pgm` file in the directory, in file-name order.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub patch: usize,
    pub qps: Vec<i32>,
    /// The last `val_count` images form the validation split.
    pub val_count: usize,
    pub block_size: usize,
}

impl DatasetSpec {
    pub fn synthetic(seed: u64, count: usize, size: usize, qps: Vec<i32>) -> Self {
        DatasetSpec {
            source: DataSource::Synthetic { seed, count, size },
            patch: 64,
            qps,
            val_count: 0,
            block_size: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::format("manifest", format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All patches of one image coded at one QP.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSamples {
    pub split: Split,
    pub image: usize,
    pub qp: i32,
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub rate_bits: f64,
    /// `count · patch²` pixels, patch-major.
    pub original: Vec<u8>,
    pub recon: Vec<u8>,
}

impl ImageSamples {
    pub fn count(&self) -> usize {
        self.original.len() / (self.patch * self.patch)
    }

    pub fn pair(&self, i: usize) -> (&[u8], &[u8]) {
        let p = self.patch * self.patch;
        (&self.original[i * p..(i + 1) * p], &self.recon[i * p..(i + 1) * p])
    }

    fn file_name(&self) -> String {
        format!("img{:05}_qp{:02}.qsim", self.image, self.qp)
    }

    fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{STORE_MAGIC} {} {} {}", self.patch, self.qp, self.count())?;
        let mut buf = Vec::with_capacity(self.original.len() * 2);
        for (&o, &r) in self.original.iter().zip(&self.recon) {
            buf.push(o);
            buf.push(r);
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Reads one sample file, returning `(patch, qp, original, recon)`.
pub(crate) fn read_sample_file<R: Read>(reader: R) -> Result<(usize, i32, Vec<u8>, Vec<u8>)> {
    let mut r = BufReader::new(reader);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != STORE_MAGIC {
        return Err(Error::format("sample file", format!("bad header `{}`", line.trim_end())));
    }
    let num = |s: &str| -> Result<i64> {
        s.parse()
            .map_err(|_| Error::format("sample file", format!("bad number `{s}`")))
    };
    let patch = num(fields[1])? as usize;
    let qp = num(fields[2])? as i32;
    let count = num(fields[3])? as usize;
    let mut raw = vec![0u8; count * patch * patch * 2];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format("sample file", "truncated pixel data"))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("sample file", "trailing bytes"));
    }
    let original = raw.iter().step_by(2).copied().collect();
    let recon = raw.iter().skip(1).step_by(2).copied().collect();
    Ok((patch, qp, original, recon))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStore {
    pub patch: usize,
    pub qps: Vec<i32>,
    pub groups: Vec<ImageSamples>,
}

impl SampleStore {
    pub fn groups(&self, split: Split, qp: Option<i32>) -> impl Iterator<Item = &ImageSamples> {
        self.groups
            .iter()
            .filter(move |g| g.split == split && qp.is_none_or(|q| g.qp == q))
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.groups(split, None).next().is_some()
    }

    /// `(original, recon)` patch pairs, in image order.
    pub fn pairs(&self, split: Split, qp: i32) -> Vec<(&[u8], &[u8])> {
        self.groups(split, Some(qp))
            .flat_map(|g| (0..g.count()).map(move |i| g.pair(i)))
            .collect()
    }

    pub fn sample_count(&self, split: Option<Split>, qp: i32) -> usize {
        self.groups
            .iter()
            .filter(|g| g.qp == qp && split.is_none_or(|s| g.split == s))
            .map(ImageSamples::count)
            .sum()
    }

    pub fn total_samples(&self) -> usize {
        self.groups.iter().map(ImageSamples::count).sum()
    }

    pub fn rate_bits(&self, split: Split, qp: i32) -> f64 {
        self.groups(split, Some(qp)).map(|g| g.rate_bits).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for split in [Split::Train, Split::Val] {
            let sub = dir.join(split.as_str());
            fs::create_dir_all(&sub).map_err(|e| Error::file(&sub, e))?;
        }
        let mut manifest = String::from(MANIFEST_HEADER);
        manifest.push('\n');
        for g in &self.groups {
            let path = dir.join(g.split.as_str()).join(g.file_name());
            let f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
            let mut w = std::io::BufWriter::new(f);
            g.write_to(&mut w)?;
            w.flush().map_err(|e| Error::file(&path, e))?;
            manifest.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                g.split,
                g.image,
                g.qp,
                g.width,
                g.height,
                g.count(),
                g.rate_bits
            ));
        }
        let mpath = dir.join(MANIFEST);
        fs::write(&mpath, manifest).map_err(|e| Error::file(&mpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::file(&mpath, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::format("manifest", "missing header"));
        }
        let mut groups = Vec::new();
        let mut patch = None;
        let mut qps: Vec<i32> = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::format("manifest", format!("bad row `{line}`")));
            }
            let bad = |what: &str| Error::format("manifest", format!("bad {what} in `{line}`"));
            let split = Split::parse(f[0])?;
            let image: usize = f[1].parse().map_err(|_| bad("image"))?;
            let qp: i32 = f[2].parse().map_err(|_| bad("qp"))?;
            let width: usize = f[3].parse().map_err(|_| bad("width"))?;
            let height: usize = f[4].parse().map_err(|_| bad("height"))?;
            let count: usize = f[5].parse().map_err(|_| bad("count"))?;
            let rate_bits: f64 = f[6].parse().map_err(|_| bad("rate"))?;
            let name = format!("img{image:05}_qp{qp:02}.qsim");
            let path = dir.join(split.as_str()).join(name);
            let file = fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
            let (p, fqp, original, recon) = read_sample_file(file).map_err(|e| match e {
                Error::Io(io) => Error::file(&path, io),
                other => other,
            })?;
            if fqp != qp || original.len() != count * p * p {
                return Err(Error::format("sample file", format!("{} disagrees with manifest", path.display())));
            }
            if *patch.get_or_insert(p) != p {
                return Err(Error::format("sample store", "mixed patch sizes"));
            }
            if !qps.contains(&qp) {
                qps.push(qp);
            }
            groups.push(ImageSamples {
                split,
                image,
                qp,
                width,
                height,
                patch: p,
                rate_bits,
                original,
                recon,
            });
        }
        let patch = patch.ok_or_else(|| Error::format("sample store", "no samples"))?;
        Ok(SampleStore { patch, qps, groups })
    }
}

fn load_images(source: &DataSource) -> Result<Vec<GrayImage>> {
    match source {
        DataSource::Synthetic { seed, count, size } => {
            Ok((0..*count as u64).map(|i| synthetic_image(*seed, i, *size)).collect())
        }
        DataSource::Directory(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::file(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
                .collect();
            paths.sort();
            paths.iter().map(|p| read_pgm(p)).collect()
        }
    }
}

/// Codes every image at every QP and tiles both versions into patches.
pub fn prepare_dataset(spec: &DatasetSpec) -> Result<SampleStore> {
    if spec.patch == 0 {
        return Err(Error::invalid("prepare_dataset", "patch size must be positive"));
    }
    if spec.qps.is_empty() {
        return Err(Error::invalid("prepare_dataset", "empty QP list"));
    }
    let images = load_images(&spec.source)?;
    if images.is_empty() {
        return Err(Error::invalid("prepare_dataset", "no images"));
    }
    if spec.val_count > images.len() {
        return Err(Error::invalid(
            "prepare_dataset",
            format!("{} validation images requested from {}", spec.val_count, images.len()),
        ));
    }
    let first_val = images.len() - spec.val_count;
    let mut groups = Vec::with_capacity(images.len() * spec.qps.len());
    for (index, img) in images.iter().enumerate() {
        if img.width < spec.patch || img.height < spec.patch {
            return Err(Error::invalid(
                "prepare_dataset",
                format!("image {index} is {}x{}, smaller than one {} patch", img.width, img.height, spec.patch),
            ));
        }
        let split = if index >= first_val { Split::Val } else { Split::Train };
        let padded = img.pad_to_multiple(spec.patch);
        for &qp in &spec.qps {
            let cfg = QuantizerConfig {
                block_size: spec.block_size,
                ..QuantizerConfig::new(qp)
            };
            let enc = encode_decode(img, &cfg)?;
            let recon = enc.recon.pad_to_multiple(spec.patch);
            let mut original = Vec::with_capacity(padded.data.len());
            let mut rec = Vec::with_capacity(padded.data.len());
            for y0 in (0..padded.height).step_by(spec.patch) {
                for x0 in (0..padded.width).step_by(spec.patch) {
                    original.extend(padded.tile(x0, y0, spec.patch));
                    rec.extend(recon.tile(x0, y0, spec.patch));
                }
            }
            groups.push(ImageSamples {
                split,
                image: index,
                qp,
                width: img.width,
                height: img.height,
                patch: spec.patch,
                rate_bits: enc.rate_bits,
                original,
                recon: rec,
            });
        }
    }
    Ok(SampleStore {
        patch: spec.patch,
        qps: spec.qps.clone(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::image::write_pgm;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            patch: 64,
            val_count: 1,
            ..DatasetSpec::synthetic(3, 3, 128, vec![22, 37])
        }
    }

    #[test]
    fn four_patches_per_image_and_qp() {
        let store = prepare_dataset(&small_spec()).unwrap();
        for g in &store.groups {
            assert_eq!(g.count(), 4);
        }
        assert_eq!(store.total_samples(), 4 * 3 * 2);
        assert_eq!(store.sample_count(Some(Split::Val), 22), 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        prepare_dataset(&small_spec()).unwrap().save(dir_a.path()).unwrap();
        prepare_dataset(&small_spec()).unwrap().save(dir_b.path()).unwrap();
        for rel in ["manifest.csv", "train/img00000_qp22.qsim", "val/img00002_qp37.qsim"] {
            assert_eq!(fs::read(dir_a.path().join(rel)).unwrap(), fs::read(dir_b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = prepare_dataset(&small_spec()).unwrap();
        store.save(dir.path()).unwrap();
        assert_eq!(SampleStore::load(dir.path()).unwrap(), store);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        prepare_dataset(&small_spec()).unwrap().save(dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("train/img00001_qp37.qsim")).unwrap();
        let header = b"QSIM1 64 37 4\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 4 * 64 * 64 * 2);
    }

    #[test]
    fn validation_images_never_in_training() {
        let store = prepare_dataset(&DatasetSpec {
            val_count: 2,
            ..DatasetSpec::synthetic(1, 5, 64, vec![27])
        })
        .unwrap();
        let train: Vec<usize> = store.groups(Split::Train, None).map(|g| g.image).collect();
        let val: Vec<usize> = store.groups(Split::Val, None).map(|g| g.image).collect();
        assert_eq!(val, vec![3, 4]);
        assert!(train.iter().all(|i| !val.contains(i)));
    }

    #[test]
    fn directory_source_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&dir.path().join("b.pgm"), &synthetic_image(1, 0, 70)).unwrap();
        write_pgm(&dir.path().join("a.pgm"), &synthetic_image(1, 1, 64)).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let spec = DatasetSpec {
            source: DataSource::Directory(dir.path().to_path_buf()),
            ..DatasetSpec::synthetic(0, 0, 0, vec![32])
        };
        let store = prepare_dataset(&spec).unwrap();
        // a.pgm (64×64) → 1 patch; b.pgm (70×70) padded to 128 → 4 patches.
        assert_eq!(store.groups.iter().map(ImageSamples::count).collect::<Vec<_>>(), vec![1, 4]);

        write_pgm(&dir.path().join("c.pgm"), &synthetic_image(1, 2, 40)).unwrap();
        assert!(prepare_dataset(&spec).is_err());
        fs::write(dir.path().join("c.pgm"), b"garbage").unwrap();
        assert!(prepare_dataset(&spec).is_err());
    }

    #[test]
    fn corrupt_sample_file_is_rejected() {
        assert!(read_sample_file(&b"QSIM2 2 22 1\n"[..]).is_err());
        assert!(read_sample_file(&b"QSIM1 2 22 1\n\x01\x02"[..]).is_err());
        let mut ok = b"QSIM1 1 22 1\n".to_vec();
        ok.extend_from_slice(&[9, 8]);
        assert_eq!(read_sample_file(&ok[..]).unwrap(), (1, 22, vec![9], vec![8]));
    }
}
