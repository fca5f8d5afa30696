//! MNIST ingestion and input encodings.
//!
//! Images are read from the IDX files unchanged. They can be binarized or
//! integer-encoded to a few gray levels, then turned into an event stream
//! that presents one unit event per timestep in a seeded random order.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub pixels: Vec<u8>,
    pub label: u8,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("{what}: truncated header")))
}

/// Parses an IDX3 image file into `(rows, cols, pixel bytes)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Idx(format!(
            "images: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * size {
        return Err(Error::Idx(format!(
            "images: header promises {n} images of {rows}x{cols}, file holds {} bytes",
            body.len()
        )));
    }
    let images = body
        .chunks_exact(size.max(1))
        .take(n)
        .map(<[u8]>::to_vec)
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Idx(format!(
            "labels: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Idx(format!(
            "labels: header promises {n} labels, file holds {}",
            body.len()
        )));
    }
    Ok(body[..n].to_vec())
}

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Vec<LabeledImage>> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (_, _, images) = parse_idx_images(&ib)?;
    let labels = parse_idx_labels(&lb)?;
    if images.len() != labels.len() {
        return Err(Error::Idx(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| {
            if label as usize >= MNIST_CLASSES {
                return Err(Error::Idx(format!("label {label} out of range")));
            }
            Ok(LabeledImage { pixels, label })
        })
        .collect()
}

/// The standard MNIST files found in one directory.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl Mnist {
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Mnist {
            train: load_idx(
                dir.join("train-images-idx3-ubyte"),
                dir.join("train-labels-idx1-ubyte"),
            )?,
            test: load_idx(
                dir.join("t10k-images-idx3-ubyte"),
                dir.join("t10k-labels-idx1-ubyte"),
            )?,
        })
    }

    pub fn exists(dir: impl AsRef<Path>) -> bool {
        let dir = dir.as_ref();
        [
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        ]
        .iter()
        .all(|f| dir.join(f).is_file())
    }

    /// Splits the 60000 training images into the first `train_len` for
    /// training and the remainder for validation.
    pub fn split_validation(&self, train_len: usize) -> (&[LabeledImage], &[LabeledImage]) {
        self.train.split_at(train_len.min(self.train.len()))
    }
}

/// 1 iff `round(p / 255) == 1` with ties rounded up, i.e. `p >= 128`.
pub fn binarize(img: &LabeledImage) -> Vec<i32> {
    img.pixels.iter().map(|&p| (p >= 128) as i32).collect()
}

/// `round(p * (levels - 1) / 255)` in exact integer arithmetic, ties up.
pub fn integer_encode(img: &LabeledImage, levels: u32) -> Result<Vec<i32>> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!(
            "integer encoding needs at least 2 levels, got {levels}"
        )));
    }
    let top = (levels - 1) as u64;
    Ok(img
        .pixels
        .iter()
        .map(|&p| ((2 * p as u64 * top + 255) / 510) as i32)
        .collect())
}

/// How images are turned into integer input vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Binary,
    Levels(u32),
}

impl Encoding {
    pub fn encode(&self, img: &LabeledImage) -> Result<Vec<i32>> {
        match *self {
            Encoding::Binary => Ok(binarize(img)),
            Encoding::Levels(l) => integer_encode(img, l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputEvent {
    pub t: u64,
    pub unit: u32,
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<InputEvent>,
    pub input_size: usize,
}

impl EventStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for e in &self.events {
            if e.t < last {
                return Err(Error::InvalidArgument("stream timesteps decrease".into()));
            }
            if e.unit as usize >= self.input_size {
                return Err(Error::InvalidArgument(format!(
                    "event unit {} >= input size {}",
                    e.unit, self.input_size
                )));
            }
            if e.sign != 1 && e.sign != -1 {
                return Err(Error::InvalidArgument(format!("event sign {}", e.sign)));
            }
            last = e.t;
        }
        Ok(())
    }

    /// Consecutive runs of events sharing a timestep.
    pub fn groups(&self) -> impl Iterator<Item = &[InputEvent]> {
        self.events.chunk_by(|a, b| a.t == b.t)
    }

    /// Number of distinct timesteps.
    pub fn num_timesteps(&self) -> usize {
        self.groups().count()
    }

    /// Writes `t,unit,sign` CSV rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# input_size={}\nt,unit,sign\n", self.input_size);
        for e in &self.events {
            out.push_str(&format!("{},{},{}\n", e.t, e.unit, e.sign));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut input_size = None;
        let mut events = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# input_size=") {
                input_size = Some(
                    rest.parse()
                        .map_err(|_| Error::Parse(format!("bad input_size line {line:?}")))?,
                );
                continue;
            }
            if line.is_empty() || line.starts_with('#') || line == "t,unit,sign" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("bad stream row {line:?}"));
            if fields.len() != 3 {
                return Err(bad());
            }
            events.push(InputEvent {
                t: fields[0].parse().map_err(|_| bad())?,
                unit: fields[1].parse().map_err(|_| bad())?,
                sign: fields[2].parse().map_err(|_| bad())?,
            });
        }
        let input_size =
            input_size.ok_or_else(|| Error::Parse("stream file lacks # input_size".into()))?;
        let stream = EventStream { events, input_size };
        stream.validate()?;
        Ok(stream)
    }
}

fn repetitions(encoded: &[i32]) -> Result<Vec<u32>> {
    let mut units = Vec::new();
    for (u, &v) in encoded.iter().enumerate() {
        if v < 0 {
            return Err(Error::InvalidArgument(format!(
                "negative input {v} at unit {u}"
            )));
        }
        units.extend(std::iter::repeat(u as u32).take(v as usize));
    }
    Ok(units)
}

/// One `+1` event per timestep; a unit of value `v` appears `v` times. The
/// order is a uniform random permutation drawn from `order_seed`.
pub fn stream_pixels(encoded: &[i32], order_seed: u64) -> Result<EventStream> {
    let mut units = repetitions(encoded)?;
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    Ok(EventStream {
        events: units
            .into_iter()
            .enumerate()
            .map(|(t, unit)| InputEvent {
                t: t as u64,
                unit,
                sign: 1,
            })
            .collect(),
        input_size: encoded.len(),
    })
}

/// `count` distinct indices below `total`, drawn with `seed` and returned
/// in ascending order.
pub fn subset_indices(total: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(count.min(total));
    idx.sort_unstable();
    idx
}

/// All events at timestep 0, in unit order.
pub fn stream_simultaneous(encoded: &[i32]) -> Result<EventStream> {
    Ok(EventStream {
        events: repetitions(encoded)?
            .into_iter()
            .map(|unit| InputEvent {
                t: 0,
                unit,
                sign: 1,
            })
            .collect(),
        input_size: encoded.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_seeded_and_distinct() {
        let a = subset_indices(100, 10, 3);
        assert_eq!(a, subset_indices(100, 10, 3));
        assert_ne!(a, subset_indices(100, 10, 4));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subset_indices(5, 10, 0), vec![0, 1, 2, 3, 4]);
    }

    fn image(pixels: Vec<u8>) -> LabeledImage {
        LabeledImage { pixels, label: 0 }
    }

    fn idx_images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(body);
        b
    }

    #[test]
    fn binarize_matches_round_half_up_for_every_pixel() {
        // Oracle: exact rational rounding of p/255 with ties going up.
        let all: Vec<u8> = (0..=255).collect();
        let got = binarize(&image(all.clone()));
        for p in all {
            let twice = 2 * p as u32;
            let oracle = if twice >= 255 { 1 } else { 0 };
            assert_eq!(got[p as usize], oracle, "pixel {p}");
        }
        assert_eq!(got[127], 0);
        assert_eq!(got[128], 1);
    }

    #[test]
    fn integer_encoding() {
        let img = image(vec![0, 100, 255, 128, 127]);
        assert_eq!(integer_encode(&img, 4).unwrap(), vec![0, 1, 3, 2, 1]);
        assert_eq!(integer_encode(&img, 2).unwrap(), binarize(&img));
        assert!(integer_encode(&img, 1).is_err());
        // 100 * 3 / 255 = 1.176..
        assert_eq!(integer_encode(&image(vec![100]), 4).unwrap(), vec![1]);
    }

    #[test]
    fn levels_two_equals_binarize_everywhere() {
        let img = image((0..=255).collect());
        assert_eq!(integer_encode(&img, 2).unwrap(), binarize(&img));
    }

    #[test]
    fn stream_conserves_counts_and_is_deterministic() {
        let mut enc = vec![0; 784];
        for u in (0..784).step_by(5).take(150) {
            enc[u] = 1;
        }
        let s = stream_pixels(&enc, 3).unwrap();
        assert_eq!(s.len(), 150);
        assert_eq!(s.num_timesteps(), 150);
        assert_eq!(s, stream_pixels(&enc, 3).unwrap());
        assert_ne!(s, stream_pixels(&enc, 4).unwrap());
        s.validate().unwrap();

        let gray = vec![2, 0, 3, 1];
        let g = stream_pixels(&gray, 9).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.events.iter().filter(|e| e.unit == 2).count(), 3);
    }

    #[test]
    fn empty_image_gives_empty_stream() {
        let s = stream_pixels(&binarize(&image(vec![0; 784])), 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let ib = idx_images(2, 2, 2, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let (r, c, imgs) = parse_idx_images(&ib).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(imgs, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);

        let mut bad = ib.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Idx(_))));
        assert!(parse_idx_images(&ib[..20]).is_err());
        assert!(parse_idx_images(&ib[..10]).is_err());

        let mut lb = LABEL_MAGIC.to_be_bytes().to_vec();
        lb.extend_from_slice(&3u32.to_be_bytes());
        lb.extend_from_slice(&[1, 2]);
        assert!(parse_idx_labels(&lb).is_err());
        lb.push(9);
        assert_eq!(parse_idx_labels(&lb).unwrap(), vec![1, 2, 9]);
    }

    #[test]
    fn load_idx_checks_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        fs::write(&ip, idx_images(2, 1, 1, &[3, 4])).unwrap();
        let mut lb = LABEL_MAGIC.to_be_bytes().to_vec();
        lb.extend_from_slice(&1u32.to_be_bytes());
        lb.push(5);
        fs::write(&lp, &lb).unwrap();
        assert!(load_idx(&ip, &lp).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = stream_pixels(&[1, 0, 2, 1], 5).unwrap();
        assert_eq!(EventStream::from_csv(&s.to_csv()).unwrap(), s);
        assert!(EventStream::from_csv("t,unit,sign\n0,1,1\n").is_err());
    }
}
