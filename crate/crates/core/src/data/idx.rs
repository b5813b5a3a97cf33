//! Bit-exact IDX (MNIST) file reader: big-endian magic and dimension sizes,
//! then unsigned bytes. Pixels rescale to [0,1] by division by 255.

use super::{Cursor, DataError};
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Read a 3-D byte image file (magic 0x00000803). Returns row-major images
/// rescaled to [0,1] plus the (rows, cols) geometry.
pub fn read_idx_images(path: &Path) -> Result<(Vec<Vec<f64>>, (usize, usize)), DataError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    let mut cur = Cursor::new(&bytes, &p);
    let magic = cur.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::WrongMagic {
            path: p.clone(),
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let per = rows.checked_mul(cols).ok_or_else(|| DataError::DimensionOverflow {
        path: p.clone(),
    })?;
    count
        .checked_mul(per)
        .ok_or_else(|| DataError::DimensionOverflow { path: p.clone() })?;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = cur.take(per)?;
        images.push(raw.iter().map(|&b| f64::from(b) / 255.0).collect());
    }
    Ok((images, (rows, cols)))
}

/// Read a label file (magic 0x00000801).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: p.clone(),
        source,
    })?;
    let mut cur = Cursor::new(&bytes, &p);
    let magic = cur.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(DataError::WrongMagic {
            path: p.clone(),
            expected: LABEL_MAGIC,
            got: magic,
        });
    }
    let count = cur.u32_be()? as usize;
    Ok(cur.take(count)?.to_vec())
}
