//! `ARFDS1` latent files.
//!
//! Layout: the 6 magic bytes, five little-endian `u32` header fields
//! (`num_classes, items_per_class, d, h, w`), then little-endian `f32`
//! values, class-major, item-major, row-major within each latent.

use std::path::Path;

use super::{CategoryDataset, LatentShape};
use crate::error::{Error, Result};
use crate::fsutil::{put_f32s, write_atomic, Reader};
use crate::numcore::Tensor;

pub const DATASET_MAGIC: &[u8; 6] = b"ARFDS1";

/// Raw contents of an `ARFDS1` file. Unlike [`CategoryDataset`] it may hold
/// zero items, which is how empty sample files are represented.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub num_classes: usize,
    pub items_per_class: usize,
    pub shape: LatentShape,
    pub data: Vec<f64>,
}

impl LatentFile {
    pub fn from_dataset(ds: &CategoryDataset) -> Result<Self> {
        let per = ds.class_items(0).len();
        if ds.items().iter().any(|c| c.len() != per) {
            return Err(Error::Format("ARFDS1 needs the same item count in every class".into()));
        }
        let data = ds
            .items()
            .iter()
            .flat_map(|c| c.iter().flat_map(|t| t.data().iter().copied()))
            .collect();
        Ok(Self {
            num_classes: ds.num_classes(),
            items_per_class: per,
            shape: ds.latent_shape(),
            data,
        })
    }

    /// Single-class file holding `latents` in order.
    pub fn from_latents(shape: LatentShape, latents: &[Tensor]) -> Result<Self> {
        let mut data = Vec::with_capacity(latents.len() * shape.numel());
        for t in latents {
            if t.shape() != shape.dims() {
                return Err(Error::shape("latent file", t.shape(), &shape.dims()));
            }
            data.extend_from_slice(t.data());
        }
        Ok(Self {
            num_classes: 1,
            items_per_class: latents.len(),
            shape,
            data,
        })
    }

    pub fn latents(&self) -> Vec<Tensor> {
        let n = self.shape.numel();
        self.data
            .chunks_exact(n)
            .map(|c| Tensor::new(&self.shape.dims(), c.to_vec()).expect("validated extents"))
            .collect()
    }

    pub fn into_dataset(self) -> Result<CategoryDataset> {
        let per = self.items_per_class;
        let all = self.latents();
        let items = all.chunks(per.max(1)).map(|c| c.to_vec()).collect();
        if per == 0 {
            return Err(Error::Format("dataset file holds no items".into()));
        }
        CategoryDataset::new(self.shape, items)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(26 + self.data.len() * 4);
        out.extend_from_slice(DATASET_MAGIC);
        for v in [
            self.num_classes,
            self.items_per_class,
            self.shape.channels,
            self.shape.height,
            self.shape.width,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        put_f32s(&mut out, &self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "ARFDS1");
        if r.take(6)? != DATASET_MAGIC {
            return Err(Error::Format("bad ARFDS1 magic".into()));
        }
        let mut header = [0usize; 5];
        for h in &mut header {
            *h = r.u32()? as usize;
        }
        let [num_classes, items_per_class, d, h, w] = header;
        if d == 0 || h == 0 || w == 0 || num_classes == 0 {
            return Err(Error::Format(format!("degenerate ARFDS1 header {header:?}")));
        }
        let count = [num_classes, items_per_class, d, h, w]
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .ok_or_else(|| Error::Format("ARFDS1 header overflows".into()))?;
        let data = r.f32s(count)?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after ARFDS1 payload", r.remaining())));
        }
        Ok(Self {
            num_classes,
            items_per_class,
            shape: LatentShape::new(d, h, w),
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

pub fn save_dataset(ds: &CategoryDataset, path: &Path) -> Result<()> {
    LatentFile::from_dataset(ds)?.save(path)
}

pub fn load_dataset(path: &Path) -> Result<CategoryDataset> {
    LatentFile::load(path)?.into_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{with_precision, Precision, RngState};
    use crate::sequence::make_gaussian_mixture_dataset;

    fn sample() -> CategoryDataset {
        with_precision(Precision::F32, || {
            make_gaussian_mixture_dataset(3, 4, LatentShape::new(2, 3, 2), 0.5, &mut RngState::new(1)).unwrap()
        })
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.arfds");
        let p2 = dir.path().join("b.arfds");
        let ds = sample();
        save_dataset(&ds, &p1).unwrap();
        let back = load_dataset(&p1).unwrap();
        assert_eq!(back, ds);
        save_dataset(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = LatentFile::from_dataset(&sample()).unwrap().encode();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(LatentFile::decode(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn header_matches_payload() {
        let bytes = LatentFile::from_dataset(&sample()).unwrap().encode();
        // independent parse of the header fields
        let field = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
        assert_eq!(&bytes[..6], b"ARFDS1");
        assert_eq!(field(0), 3);
        let payload = field(0) * field(1) * field(2) * field(3) * field(4);
        assert_eq!(bytes.len(), 26 + 4 * payload);
    }

    #[test]
    fn empty_sample_file_is_valid() {
        let f = LatentFile::from_latents(LatentShape::new(1, 2, 2), &[]).unwrap();
        let bytes = f.encode();
        assert_eq!(bytes.len(), 26);
        let back = LatentFile::decode(&bytes).unwrap();
        assert_eq!(back.items_per_class, 0);
        assert!(back.into_dataset().is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = LatentFile::from_dataset(&sample()).unwrap().encode();
        bytes[0] = b'X';
        assert!(matches!(LatentFile::decode(&bytes), Err(Error::Format(_))));
    }
}
