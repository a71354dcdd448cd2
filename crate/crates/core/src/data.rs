//! CIFAR-10 binary ingestion, a procedural stand-in dataset, splits and batches.
//!
//! Records are one label byte followed by 3072 pixel bytes: the red plane,
//! then green, then blue, each 32×32 row-major. Images are kept in that
//! channel-planar layout throughout the crate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const IMAGE_BYTES: usize = 3 * SIDE * SIDE;
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const FILE_BYTES: usize = RECORDS_PER_FILE * RECORD_BYTES;
pub const CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cifar10Set {
    /// `len() × 3072` bytes, channel-planar.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Cifar10Set {
    pub fn empty(split: Split) -> Self {
        Cifar10Set {
            images: Vec::new(),
            labels: Vec::new(),
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn push(&mut self, image: &[u8], label: u8) {
        assert_eq!(image.len(), IMAGE_BYTES);
        self.images.extend_from_slice(image);
        self.labels.push(label);
    }

    /// Records `indices` in the given order.
    pub fn select(&self, indices: &[usize], split: Split) -> Self {
        let mut out = Cifar10Set::empty(split);
        out.images.reserve(indices.len() * IMAGE_BYTES);
        for &i in indices {
            out.push(self.image(i), self.labels[i]);
        }
        out
    }

    /// The first `n` records.
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    /// Serializes back to the binary record layout.
    pub fn to_record_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD_BYTES);
        for i in 0..self.len() {
            out.push(self.labels[i]);
            out.extend_from_slice(self.image(i));
        }
        out
    }
}

/// Parses any whole number of records.
pub fn parse_records(bytes: &[u8], split: Split) -> Result<Cifar10Set> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let mut set = Cifar10Set::empty(split);
    set.images.reserve(bytes.len() / RECORD_BYTES * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Corrupt(format!("record {i} has label {}", rec[0])));
        }
        set.push(&rec[1..], rec[0]);
    }
    Ok(set)
}

/// Reads one full batch file, which must hold exactly 10,000 records.
pub fn load_batch_file(path: &Path, split: Split) -> Result<Cifar10Set> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != FILE_BYTES {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {FILE_BYTES} bytes per batch file",
            path.display(),
            bytes.len()
        )));
    }
    parse_records(&bytes, split).map_err(|e| match e {
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads the five training files and the test file from `dir`.
pub fn load_cifar(dir: &Path) -> Result<(Cifar10Set, Cifar10Set)> {
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let mut train = Cifar10Set::empty(Split::Train);
    for name in TRAIN_FILES {
        let part = load_batch_file(&dir.join(name), Split::Train)?;
        train.images.extend_from_slice(&part.images);
        train.labels.extend_from_slice(&part.labels);
    }
    let test = load_batch_file(&dir.join(TEST_FILE), Split::Test)?;
    Ok((train, test))
}

/// Files `load_cifar` expects under `dir`.
pub fn expected_files(dir: &Path) -> Vec<PathBuf> {
    TRAIN_FILES
        .iter()
        .chain([&TEST_FILE])
        .map(|f| dir.join(f))
        .collect()
}

/// Procedural ten-class images. Each class has its own stripe orientation,
/// frequency and palette; phase, contrast and pixel noise vary per image, so
/// neighbouring pixels are predictive and pooled colour separates classes.
pub fn synthetic<R: Rng + ?Sized>(count: usize, rng: &mut R, split: Split) -> Cifar10Set {
    const PALETTES: [[[f64; 3]; 2]; CLASSES] = [
        [[200.0, 40.0, 40.0], [250.0, 190.0, 150.0]],
        [[30.0, 150.0, 40.0], [190.0, 240.0, 120.0]],
        [[30.0, 50.0, 190.0], [150.0, 190.0, 250.0]],
        [[220.0, 200.0, 30.0], [90.0, 60.0, 20.0]],
        [[20.0, 20.0, 20.0], [230.0, 230.0, 230.0]],
        [[160.0, 40.0, 170.0], [240.0, 170.0, 220.0]],
        [[20.0, 170.0, 180.0], [230.0, 120.0, 40.0]],
        [[120.0, 120.0, 120.0], [60.0, 90.0, 160.0]],
        [[240.0, 120.0, 0.0], [40.0, 40.0, 110.0]],
        [[100.0, 70.0, 40.0], [170.0, 220.0, 200.0]],
    ];
    let mut set = Cifar10Set::empty(split);
    set.images.reserve(count * IMAGE_BYTES);
    let mut img = vec![0u8; IMAGE_BYTES];
    for i in 0..count {
        let class = i % CLASSES;
        let angle = class as f64 * std::f64::consts::PI / CLASSES as f64;
        let freq = 0.25 + 0.07 * (class % 4) as f64;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let contrast = rng.gen_range(0.6..1.0);
        let (s, c) = angle.sin_cos();
        let [a, b] = PALETTES[class];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let t = 0.5 + 0.5 * contrast * (freq * (c * x as f64 + s * y as f64) + phase).sin();
                for ch in 0..3 {
                    let noise: f64 = rng.gen_range(-12.0..12.0);
                    let v = a[ch] + t * (b[ch] - a[ch]) + noise;
                    img[ch * SIDE * SIDE + y * SIDE + x] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        set.push(&img, class as u8);
    }
    set
}

/// Holds out the last `val_count` records (in stored order) and shuffles the rest.
pub fn split_and_shuffle<R: Rng + ?Sized>(
    train: &Cifar10Set,
    rng: &mut R,
    val_count: usize,
) -> Result<(Cifar10Set, Cifar10Set)> {
    let n = train.len();
    if val_count >= n && n > 0 {
        return Err(Error::Config(format!(
            "validation count {val_count} leaves no training records of {n}"
        )));
    }
    let cut = n - val_count;
    let mut order: Vec<usize> = (0..cut).collect();
    order.shuffle(rng);
    let val: Vec<usize> = (cut..n).collect();
    Ok((
        train.select(&order, Split::Train),
        train.select(&val, Split::Validation),
    ))
}

/// One epoch of index batches: a fresh permutation cut into `batch_size`
/// chunks, keeping the short tail.
pub fn to_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sorted_records(set: &Cifar10Set) -> Vec<Vec<u8>> {
        let mut v: Vec<Vec<u8>> = set
            .to_record_bytes()
            .chunks(RECORD_BYTES)
            .map(<[u8]>::to_vec)
            .collect();
        v.sort();
        v
    }

    #[test]
    fn file_size_constant() {
        assert_eq!(FILE_BYTES, 30_730_000);
    }

    #[test]
    fn two_record_fixture() {
        let mut bytes = vec![0u8; 2 * RECORD_BYTES];
        bytes[0] = 7;
        bytes[1] = 11; // red (0,0) of record 0
        bytes[1 + 1024] = 22; // green (0,0)
        bytes[1 + 2048 + 33] = 33; // blue (1,1)
        bytes[RECORD_BYTES] = 2;
        bytes[RECORD_BYTES + 3072] = 255; // last blue byte of record 1
        let set = parse_records(&bytes, Split::Train).unwrap();
        assert_eq!(set.labels, vec![7, 2]);
        assert_eq!(set.image(0)[0], 11);
        assert_eq!(set.image(0)[1024], 22);
        assert_eq!(set.image(0)[2048 + SIDE + 1], 33);
        assert_eq!(set.image(1)[3071], 255);
        assert_eq!(set.to_record_bytes(), bytes);
    }

    #[test]
    fn bad_label_and_length() {
        let mut bytes = vec![0u8; RECORD_BYTES];
        bytes[0] = 10;
        assert!(matches!(
            parse_records(&bytes, Split::Train),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            parse_records(&bytes[1..], Split::Train),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_file_size_names_expected_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data_batch_1.bin");
        fs::write(&p, vec![0u8; RECORD_BYTES]).unwrap();
        let msg = load_batch_file(&p, Split::Train).unwrap_err().to_string();
        assert!(msg.contains("30730000"), "{msg}");
    }

    #[test]
    fn split_keeps_tail_for_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = synthetic(30, &mut rng, Split::Train);
        let (tr, val) = split_and_shuffle(&set, &mut ChaCha8Rng::seed_from_u64(2), 10).unwrap();
        assert_eq!(val.images, set.images[20 * IMAGE_BYTES..]);
        assert_eq!(tr.len(), 20);
        let mut union = tr.clone();
        union.images.extend_from_slice(&val.images);
        union.labels.extend_from_slice(&val.labels);
        assert_eq!(sorted_records(&union), sorted_records(&set));

        let (tr0, val0) = split_and_shuffle(&set, &mut ChaCha8Rng::seed_from_u64(2), 0).unwrap();
        assert!(val0.is_empty());
        assert_eq!(sorted_records(&tr0), sorted_records(&set));
        let (again, _) = split_and_shuffle(&set, &mut ChaCha8Rng::seed_from_u64(2), 10).unwrap();
        assert_eq!(again, tr);
    }

    #[test]
    fn batches_cover_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = to_batches(50_000, 128, &mut rng).unwrap();
        assert_eq!(b.len(), 391);
        assert!(b[..390].iter().all(|x| x.len() == 128));
        assert_eq!(b[390].len(), 80);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert!(all.iter().enumerate().all(|(i, &v)| i == v));
        assert_eq!(to_batches(7, 7, &mut rng).unwrap().len(), 1);
        assert!(to_batches(7, 0, &mut rng).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synthetic(256, &mut ChaCha8Rng::seed_from_u64(9), Split::Train);
        let b = synthetic(256, &mut ChaCha8Rng::seed_from_u64(9), Split::Train);
        assert_eq!(a, b);
        let mut counts = [0; CLASSES];
        for &l in &a.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 25 || c == 26));
    }
}
