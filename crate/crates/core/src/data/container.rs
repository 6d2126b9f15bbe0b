//! The `ZVDS` dataset container.
//!
//! Layout, all integers little-endian:
//!
//! | field        | type | notes                         |
//! |--------------|------|-------------------------------|
//! | magic        | 4 B  | `"ZVDS"`                      |
//! | version      | u32  | `1`                           |
//! | n            | u32  | image count                   |
//! | height       | u16  |                               |
//! | width        | u16  |                               |
//! | channels     | u8   | 1 (grayscale) or 3 (RGB)      |
//! | class_count  | u16  | at most 256                   |
//! | task_kind    | u8   | 0 binary, 1 multiclass        |
//! | images       | n·H·W·C bytes, HWC order per image   |
//! | labels       | n bytes                              |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resize::resize_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ZVDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
}

impl TaskKind {
    fn code(self) -> u8 {
        match self {
            TaskKind::Binary => 0,
            TaskKind::Multiclass => 1,
        }
    }

    pub fn for_class_count(k: usize) -> Self {
        if k == 2 {
            TaskKind::Binary
        } else {
            TaskKind::Multiclass
        }
    }
}

/// Labeled images stored as unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    height: usize,
    width: usize,
    channels: usize,
    class_count: usize,
    task_kind: TaskKind,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl DatasetSplit {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        class_count: usize,
        task_kind: TaskKind,
        images: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let split = DatasetSplit {
            height,
            width,
            channels,
            class_count,
            task_kind,
            images,
            labels,
        };
        split.validate()?;
        Ok(split)
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return fail(format!(
                "image extents must be positive, got {}×{}×{}",
                self.height, self.width, self.channels
            ));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize || self.channels > u8::MAX as usize {
            return fail("image extents exceed the container's field widths".into());
        }
        if self.class_count == 0 || self.class_count > 256 {
            return fail(format!("class_count {} outside 1..=256", self.class_count));
        }
        if self.task_kind == TaskKind::Binary && self.class_count != 2 {
            return fail(format!("binary task with {} classes", self.class_count));
        }
        if self.images.len() != self.labels.len() * self.image_len() {
            return fail(format!(
                "{} image bytes for {} labels of {} bytes each",
                self.images.len(),
                self.labels.len(),
                self.image_len()
            ));
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l as usize >= self.class_count) {
            return fail(format!("label {l} of image {i} is not below class_count {}", self.class_count));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Image `i` as an `[S×S×C]` tensor in `[0, 1]`, bilinearly resized to
    /// `size` when the stored resolution differs.
    pub fn image_tensor(&self, i: usize, size: usize) -> Result<Tensor> {
        let c = self.channels;
        let pixels: Vec<f64> = if self.height == size && self.width == size {
            self.image(i).iter().map(|&b| b as f64).collect()
        } else {
            resize_bilinear(self.image(i), self.height, self.width, c, size)?
        };
        Tensor::new(&[size, size, c], pixels.into_iter().map(|v| v / 255.0).collect())
    }

    /// New split holding the given images, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Usage(format!("index {i} out of range for {} images", self.len())));
            }
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        DatasetSplit::new(
            self.height,
            self.width,
            self.channels,
            self.class_count,
            self.task_kind,
            images,
            labels,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.images.len() + self.labels.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u16).to_le_bytes());
        buf.extend_from_slice(&(self.width as u16).to_le_bytes());
        buf.push(self.channels as u8);
        buf.extend_from_slice(&(self.class_count as u16).to_le_bytes());
        buf.push(self.task_kind.code());
        buf.extend_from_slice(&self.images);
        buf.extend_from_slice(&self.labels);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {magic:?}, expected \"ZVDS\""),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported container version {version}"),
            });
        }
        let n = r.u32()? as usize;
        let height = r.u16()? as usize;
        let width = r.u16()? as usize;
        let channels = r.u8()? as usize;
        let class_count = r.u16()? as usize;
        let kind_at = r.offset();
        let task_kind = match r.u8()? {
            0 => TaskKind::Binary,
            1 => TaskKind::Multiclass,
            other => {
                return Err(Error::Format {
                    offset: kind_at,
                    detail: format!("unknown task_kind {other}"),
                })
            }
        };
        let images = r.take(n * height * width * channels)?.to_vec();
        let labels = r.take(n)?.to_vec();
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.offset(),
                detail: format!("{} trailing bytes after labels", r.remaining()),
            });
        }
        DatasetSplit::new(height, width, channels, class_count, task_kind, images, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Little-endian cursor that reports truncation with its byte offset.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format {
                offset: self.pos,
                detail: format!(
                    "truncated: need {n} bytes, {} available, {} missing",
                    self.remaining(),
                    n - self.remaining()
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
