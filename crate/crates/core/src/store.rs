//! On-disk dataset layout.
//!
//! ```text
//! manifest              key = value lines: classes, palette, sizes, seeds
//! rgb/<id>.png          24-bit RGB
//! labels/<id>.png       8-bit gray, pixel = class id
//! pred/<id>.png         8-bit gray, only when a prediction exists
//! masks/<id>_ood.png    0/255
//! masks/<id>_mis.png    0/255
//! probs/<id>.bin        "DPRB", u32 LE version, then f32 LE H×W×C
//! ```
//!
//! Triplet sets for inspection go to their own directory: `index` with one
//! line per triplet (`k anchor positive negative semantic_diff`, origins as
//! `id@row,col`) and `<k>_a.png`, `<k>_p.png`, `<k>_n.png`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, ProbField, RgbImage};
use crate::patches::{Origin, Triplet};
use crate::toyworld::{ClassSet, DatasetSpec, LabeledImage, SceneSpec};

pub const PROBS_MAGIC: &[u8; 4] = b"DPRB";
pub const PROBS_VERSION: u32 = 1;
pub const MANIFEST_FORMAT: &str = "dissim-dataset 1";

const SUBDIRS: [&str; 5] = ["rgb", "labels", "pred", "masks", "probs"];

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
    w.write_image_data(data).map_err(|e| png_err(path, e))?;
    w.finish().map_err(|e| png_err(path, e))
}

fn read_png(path: &Path, want: png::ColorType) -> Result<(usize, usize, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.color_type != want || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!("expected 8-bit {want:?}, found {:?} {:?}", info.bit_depth, info.color_type),
        ));
    }
    buf.truncate(info.buffer_size());
    Ok((info.height as usize, info.width as usize, buf))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_png(path, img.width, img.height, png::ColorType::Rgb, &img.data)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let (height, width, data) = read_png(path, png::ColorType::Rgb)?;
    Ok(RgbImage { height, width, data })
}

pub fn write_gray_png(path: &Path, g: &Grid<u8>) -> Result<()> {
    write_png(path, g.width, g.height, png::ColorType::Grayscale, &g.data)
}

pub fn read_gray_png(path: &Path) -> Result<Grid<u8>> {
    let (h, w, data) = read_png(path, png::ColorType::Grayscale)?;
    Grid::from_vec(h, w, data)
}

pub fn write_mask_png(path: &Path, m: &Mask) -> Result<()> {
    write_gray_png(path, &m.map(|&b| if b { 255 } else { 0 }))
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let g = read_gray_png(path)?;
    if let Some(v) = g.data.iter().find(|&&v| v != 0 && v != 255) {
        return Err(Error::format(path, format!("mask value {v} is neither 0 nor 255")));
    }
    Ok(g.map(|&v| v == 255))
}

pub fn encode_probs(p: &ProbField) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * p.data.len());
    out.extend_from_slice(PROBS_MAGIC);
    out.extend_from_slice(&PROBS_VERSION.to_le_bytes());
    for v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode a probability file for an `height × width` image; the class count
/// follows from the length.
pub fn decode_probs(bytes: &[u8], height: usize, width: usize, origin: &Path) -> Result<ProbField> {
    if bytes.len() < 8 || &bytes[..4] != PROBS_MAGIC {
        return Err(Error::format(origin, "missing DPRB header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PROBS_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let body = &bytes[8..];
    let pixels = height * width;
    if pixels == 0 || body.len() % (4 * pixels) != 0 || body.is_empty() {
        return Err(Error::format(
            origin,
            format!("{} payload bytes do not fit {height}x{width}xC float32", body.len()),
        ));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ProbField {
        height,
        width,
        classes: data.len() / pixels,
        data,
    })
}

/// Everything about a dataset directory except the pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub classes: ClassSet,
    pub spec: DatasetSpec,
    /// `(id, render seed)` in dataset order.
    pub images: Vec<(String, u64)>,
}

fn join_ids(ids: &[u8]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::invalid(format!("manifest {key}: bad item {t:?}"))))
        .collect()
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut lines = vec![
            format!("format = {MANIFEST_FORMAT}"),
            format!("height = {}", s.scene.height),
            format!("width = {}", s.scene.width),
            format!("patch_size = {}", s.scene.patch_size),
            format!("noise_level = {}", s.scene.noise_level),
            format!("count = {}", s.count),
            format!("seed = {}", s.seed),
            format!("n_objects = {}", s.n_objects),
            format!("ood_rate = {}", s.ood_rate),
            format!("max_ood = {}", s.max_ood),
            format!("corrupt_rate = {}", s.corrupt_rate),
            format!("in_dist_ids = {}", join_ids(&self.classes.in_dist_ids)),
            format!("ood_ids = {}", join_ids(&self.classes.ood_ids)),
            format!("background_id = {}", self.classes.background_id),
        ];
        for (id, c) in &self.classes.palette {
            lines.push(format!("palette.{id} = {},{},{}", c[0], c[1], c[2]));
        }
        for (id, seed) in &self.images {
            lines.push(format!("image.{id} = {seed}"));
        }
        lines.join("\n") + "\n"
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        let mut palette = BTreeMap::new();
        let mut images = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::format(origin, format!("line {}: expected key = value", n + 1)))?;
            if let Some(id) = k.strip_prefix("palette.") {
                let id: u8 = id.parse().map_err(|_| Error::format(origin, format!("bad palette id {id:?}")))?;
                let rgb: Vec<u8> = parse_list(v, k)?;
                let rgb: [u8; 3] = rgb
                    .try_into()
                    .map_err(|_| Error::format(origin, format!("palette.{id} needs three values")))?;
                palette.insert(id, rgb);
            } else if let Some(id) = k.strip_prefix("image.") {
                let seed = v
                    .parse()
                    .map_err(|_| Error::format(origin, format!("bad render seed for {id}")))?;
                images.push((id.to_string(), seed));
            } else if kv.insert(k, v).is_some() {
                return Err(Error::format(origin, format!("duplicate key {k}")));
            }
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::format(origin, format!("missing key {k}")));
        fn num<T: std::str::FromStr>(v: &str, k: &str, origin: &Path) -> Result<T> {
            v.parse().map_err(|_| Error::format(origin, format!("bad value for {k}: {v:?}")))
        }
        if get("format")? != MANIFEST_FORMAT {
            return Err(Error::format(origin, "unsupported manifest format"));
        }
        let classes = ClassSet::new(
            parse_list(get("in_dist_ids")?, "in_dist_ids")?,
            parse_list(get("ood_ids")?, "ood_ids")?,
            palette,
            num(get("background_id")?, "background_id", origin)?,
        )?;
        let spec = DatasetSpec {
            scene: SceneSpec {
                height: num(get("height")?, "height", origin)?,
                width: num(get("width")?, "width", origin)?,
                patch_size: num(get("patch_size")?, "patch_size", origin)?,
                noise_level: num(get("noise_level")?, "noise_level", origin)?,
            },
            count: num(get("count")?, "count", origin)?,
            seed: num(get("seed")?, "seed", origin)?,
            n_objects: num(get("n_objects")?, "n_objects", origin)?,
            ood_rate: num(get("ood_rate")?, "ood_rate", origin)?,
            max_ood: num(get("max_ood")?, "max_ood", origin)?,
            corrupt_rate: num(get("corrupt_rate")?, "corrupt_rate", origin)?,
        };
        let known = [
            "format",
            "height",
            "width",
            "patch_size",
            "noise_level",
            "count",
            "seed",
            "n_objects",
            "ood_rate",
            "max_ood",
            "corrupt_rate",
            "in_dist_ids",
            "ood_ids",
            "background_id",
        ];
        if let Some(k) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::format(origin, format!("unknown key {k}")));
        }
        if images.len() != spec.count {
            return Err(Error::format(
                origin,
                format!("count = {} but {} image entries", spec.count, images.len()),
            ));
        }
        Ok(Manifest { classes, spec, images })
    }
}

fn path_of(dir: &Path, sub: &str, name: String) -> PathBuf {
    dir.join(sub).join(name)
}

/// Write a dataset directory. The directory must exist and be empty of
/// dataset files; callers handle `--force`.
pub fn save_dataset(dir: &Path, spec: &DatasetSpec, classes: &ClassSet, images: &[LabeledImage]) -> Result<()> {
    for sub in SUBDIRS {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for im in images {
        let id = &im.id;
        write_rgb_png(&path_of(dir, "rgb", format!("{id}.png")), &im.rgb)?;
        write_gray_png(&path_of(dir, "labels", format!("{id}.png")), &im.labels)?;
        write_mask_png(&path_of(dir, "masks", format!("{id}_ood.png")), &im.ood_mask)?;
        write_mask_png(&path_of(dir, "masks", format!("{id}_mis.png")), &im.misclass_mask)?;
        if let Some(p) = &im.pred_labels {
            write_gray_png(&path_of(dir, "pred", format!("{id}.png")), p)?;
        }
        if let Some(p) = &im.pred_probs {
            let path = path_of(dir, "probs", format!("{id}.bin"));
            fs::write(&path, encode_probs(p)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let manifest = Manifest {
        classes: classes.clone(),
        spec: DatasetSpec {
            count: images.len(),
            ..spec.clone()
        },
        images: images.iter().map(|im| (im.id.clone(), im.render_seed)).collect(),
    };
    let path = dir.join("manifest");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse(&text, &path)
}

fn load_item(dir: &Path, m: &Manifest, id: &str, render_seed: u64) -> Result<LabeledImage> {
    let rgb = read_rgb_png(&path_of(dir, "rgb", format!("{id}.png")))?;
    let labels_path = path_of(dir, "labels", format!("{id}.png"));
    let labels = read_gray_png(&labels_path)?;
    if rgb.height != labels.height || rgb.width != labels.width {
        return Err(Error::format(&labels_path, "size differs from rgb"));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| !m.classes.contains(l)) {
        return Err(Error::format(&labels_path, format!("unknown class id {bad}")));
    }
    let pred_path = path_of(dir, "pred", format!("{id}.png"));
    let pred_labels = if pred_path.exists() {
        let p = read_gray_png(&pred_path)?;
        if !p.same_shape(&labels) {
            return Err(Error::format(&pred_path, "size differs from labels"));
        }
        Some(p)
    } else {
        None
    };
    let probs_path = path_of(dir, "probs", format!("{id}.bin"));
    let pred_probs = if probs_path.exists() {
        let bytes = fs::read(&probs_path).map_err(|e| Error::io(&probs_path, e))?;
        Some(decode_probs(&bytes, labels.height, labels.width, &probs_path)?)
    } else {
        None
    };
    let ood_mask = read_mask_png(&path_of(dir, "masks", format!("{id}_ood.png")))?;
    let misclass_mask = read_mask_png(&path_of(dir, "masks", format!("{id}_mis.png")))?;
    let im = LabeledImage {
        id: id.to_string(),
        rgb,
        labels,
        ood_mask,
        misclass_mask,
        pred_labels,
        pred_probs,
        render_seed,
        noise_level: m.spec.scene.noise_level,
    };
    im.check_invariants(&m.classes)
        .map_err(|e| Error::format(dir, format!("{id}: {e}")))?;
    Ok(im)
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<LabeledImage>)> {
    let m = load_manifest(dir)?;
    let images = m
        .images
        .iter()
        .map(|(id, seed)| load_item(dir, &m, id, *seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, images))
}

/// One line of a triplet index.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub anchor: Origin,
    pub positive: Origin,
    pub negative: Origin,
    pub semantic_diff: f64,
}

/// Write the patch trios and the index. `dir` must exist.
pub fn save_triplets(dir: &Path, triplets: &[Triplet]) -> Result<()> {
    let mut index = String::new();
    for (k, t) in triplets.iter().enumerate() {
        write_rgb_png(&dir.join(format!("{k:06}_a.png")), &t.anchor.to_rgb8())?;
        write_rgb_png(&dir.join(format!("{k:06}_p.png")), &t.positive.to_rgb8())?;
        write_rgb_png(&dir.join(format!("{k:06}_n.png")), &t.negative.to_rgb8())?;
        index.push_str(&format!(
            "{k:06} {} {} {} {}\n",
            t.anchor.origin, t.positive.origin, t.negative.origin, t.semantic_diff
        ));
    }
    let path = dir.join("index");
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

fn parse_origin(s: &str) -> Option<Origin> {
    let (image, rc) = s.rsplit_once('@')?;
    let (r, c) = rc.split_once(',')?;
    Some(Origin {
        image: image.into(),
        row: r.parse().ok()?,
        col: c.parse().ok()?,
    })
}

pub fn load_triplet_index(dir: &Path) -> Result<Vec<TripletRecord>> {
    let path = dir.join("index");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::format(&path, format!("line {}: {line:?}", n + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(TripletRecord {
                anchor: parse_origin(f[1]).ok_or_else(bad)?,
                positive: parse_origin(f[2]).ok_or_else(bad)?,
                negative: parse_origin(f[3]).ok_or_else(bad)?,
                semantic_diff: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Hex SHA-256 over the sorted relative paths and contents of every file
/// under `dir`.
pub fn tree_hash(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        let path = dir.join(&rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::generate_dataset;

    #[test]
    fn dataset_round_trip() {
        let c = ClassSet::default();
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, 32),
            count: 3,
            seed: 4,
            ood_rate: 1.0,
            corrupt_rate: 0.3,
            ..DatasetSpec::default()
        };
        let images = generate_dataset(&spec, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &spec, &c, &images).unwrap();
        let (m, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(m.spec, spec);
        assert_eq!(m.classes, c);
        assert_eq!(back, images);
    }

    #[test]
    fn probs_header_is_checked() {
        let p = ProbField {
            height: 1,
            width: 2,
            classes: 2,
            data: vec![0.25, 0.75, 1.0, 0.0],
        };
        let bytes = encode_probs(&p);
        assert_eq!(&bytes[..8], b"DPRB\x01\0\0\0");
        assert_eq!(decode_probs(&bytes, 1, 2, Path::new("x")).unwrap(), p);
        assert!(decode_probs(&bytes[..bytes.len() - 1], 1, 2, Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_probs(&bad, 1, 2, Path::new("x")).is_err());
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let m = Manifest {
            classes: ClassSet::default(),
            spec: DatasetSpec {
                count: 0,
                ..DatasetSpec::default()
            },
            images: vec![],
        };
        let text = m.to_text();
        assert_eq!(Manifest::parse(&text, Path::new("m")).unwrap(), m);
        assert!(Manifest::parse(&(text + "colour = 3\n"), Path::new("m")).is_err());
    }

    #[test]
    fn tree_hash_sees_content_and_names() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a"), b"1").unwrap();
        let h1 = tree_hash(d.path()).unwrap();
        assert_eq!(h1, tree_hash(d.path()).unwrap());
        fs::write(d.path().join("a"), b"2").unwrap();
        let h2 = tree_hash(d.path()).unwrap();
        assert_ne!(h1, h2);
        fs::rename(d.path().join("a"), d.path().join("b")).unwrap();
        assert_ne!(h2, tree_hash(d.path()).unwrap());
    }

    #[test]
    fn triplet_index_round_trip() {
        use crate::evaluation::{source_pairs, Synthesizer};
        use crate::patches::{build_triplets, TripletConfig};
        let c = ClassSet::default();
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, 16),
            count: 2,
            seed: 5,
            ..DatasetSpec::default()
        };
        let images = generate_dataset(&spec, &c).unwrap();
        let (real, syn) = source_pairs(&images, &Synthesizer::Oracle, &c, 5).unwrap();
        let cfg = TripletConfig {
            patch_size: 16,
            ..TripletConfig::default()
        };
        let set = build_triplets(&real, &syn, &cfg).unwrap();
        let d = tempfile::tempdir().unwrap();
        save_triplets(d.path(), &set.triplets).unwrap();
        let records = load_triplet_index(d.path()).unwrap();
        assert_eq!(records.len(), set.triplets.len());
        for (k, (r, t)) in records.iter().zip(&set.triplets).enumerate() {
            assert_eq!(r.anchor, t.anchor.origin);
            assert_eq!(r.negative, t.negative.origin);
            assert_eq!(r.semantic_diff, t.semantic_diff);
            let n = read_rgb_png(&d.path().join(format!("{k:06}_n.png"))).unwrap();
            assert_eq!(n, t.negative.to_rgb8());
        }
        fs::write(d.path().join("index"), "0 a@0,0 b\n").unwrap();
        assert!(load_triplet_index(d.path()).is_err());
    }
}
