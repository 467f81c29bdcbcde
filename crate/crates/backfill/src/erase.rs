use std::path::PathBuf;
use std::process::Command;

use imtrans_core::Raster;
use serde::{Deserialize, Serialize};

use crate::BackfillError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseMode {
    Naive,
    External,
}

/// Removes text from a crop. Output dims equal input dims.
pub trait EraseBackend: Send + Sync {
    fn mode(&self) -> EraseMode;
    /// `mask` is single-channel; nonzero marks text pixels.
    fn erase(&self, crop: &Raster, mask: &Raster) -> Result<Raster, BackfillError>;
}

/// Iterative boundary-mean fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveErase {
    /// Smoothing sweeps after the initial fill.
    pub max_sweeps: usize,
    /// Sweeps stop once no value moves more than this.
    pub tolerance: f32,
}

impl Default for NaiveErase {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            tolerance: 1e-3,
        }
    }
}

const NEIGHBOURS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl EraseBackend for NaiveErase {
    fn mode(&self) -> EraseMode {
        EraseMode::Naive
    }

    fn erase(&self, crop: &Raster, mask: &Raster) -> Result<Raster, BackfillError> {
        let (w, h) = crop.dims();
        if mask.dims() != (w, h) {
            return Err(BackfillError::Dims(format!(
                "mask {:?} vs crop {:?}",
                mask.dims(),
                (w, h)
            )));
        }
        let c = crop.channels();
        let m = mask.to_gray();
        let holes: Vec<bool> = m.data().iter().map(|&v| v != 0).collect();
        let n_holes = holes.iter().filter(|&&b| b).count();
        if n_holes == 0 {
            return Ok(crop.clone());
        }
        if n_holes == w * h {
            log::warn!("erase mask covers the whole crop; filling with the crop mean");
            let mut mean = vec![0u8; c];
            for (k, v) in mean.iter_mut().enumerate() {
                let s: u64 = crop.data().iter().skip(k).step_by(c).map(|&x| x as u64).sum();
                *v = ((s as f64) / (w * h) as f64).round() as u8;
            }
            return Ok(Raster::filled(w, h, &mean));
        }
        let mut vals: Vec<f32> = crop.data().iter().map(|&v| v as f32).collect();
        let mut known: Vec<bool> = holes.iter().map(|&b| !b).collect();
        let idx = |x: i64, y: i64| (y as usize) * w + x as usize;
        let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64;

        // onion fill: each ring takes the mean of already-known neighbours
        let mut remaining = n_holes;
        while remaining > 0 {
            let mut ring = Vec::new();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if known[idx(x, y)] {
                        continue;
                    }
                    let mut acc = vec![0.0f32; c];
                    let mut cnt = 0;
                    for (dx, dy) in NEIGHBOURS {
                        let (nx, ny) = (x + dx, y + dy);
                        if inside(nx, ny) && known[idx(nx, ny)] {
                            let j = idx(nx, ny) * c;
                            for k in 0..c {
                                acc[k] += vals[j + k];
                            }
                            cnt += 1;
                        }
                    }
                    if cnt > 0 {
                        ring.push((idx(x, y), acc.into_iter().map(|a| a / cnt as f32).collect::<Vec<_>>()));
                    }
                }
            }
            for (i, v) in &ring {
                vals[i * c..(i + 1) * c].copy_from_slice(v);
                known[*i] = true;
            }
            remaining -= ring.len();
        }

        // relax hole pixels towards the mean of all neighbours until fixed point
        for _ in 0..self.max_sweeps {
            let mut moved = 0.0f32;
            let prev = vals.clone();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let i = idx(x, y);
                    if !holes[i] {
                        continue;
                    }
                    let mut cnt = 0;
                    let mut acc = vec![0.0f32; c];
                    for (dx, dy) in NEIGHBOURS {
                        let (nx, ny) = (x + dx, y + dy);
                        if inside(nx, ny) {
                            let j = idx(nx, ny) * c;
                            for k in 0..c {
                                acc[k] += prev[j + k];
                            }
                            cnt += 1;
                        }
                    }
                    for k in 0..c {
                        let v = acc[k] / cnt as f32;
                        moved = moved.max((v - vals[i * c + k]).abs());
                        vals[i * c + k] = v;
                    }
                }
            }
            if moved < self.tolerance {
                break;
            }
        }

        let mut out = crop.clone();
        for (i, &hole) in holes.iter().enumerate() {
            if hole {
                for k in 0..c {
                    out.data_mut()[i * c + k] = vals[i * c + k].round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(out)
    }
}

/// External eraser: runs `program args... <crop.png> <mask.png> <out.png>`
/// and reads the result back.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandErase {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl EraseBackend for CommandErase {
    fn mode(&self) -> EraseMode {
        EraseMode::External
    }

    fn erase(&self, crop: &Raster, mask: &Raster) -> Result<Raster, BackfillError> {
        let dir = tempfile::tempdir().map_err(|e| BackfillError::Erase(format!("temp dir: {e}")))?;
        let (ci, mi, oi) = (
            dir.path().join("crop.png"),
            dir.path().join("mask.png"),
            dir.path().join("out.png"),
        );
        crop.save_png(&ci)?;
        mask.save_png(&mi)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .args([&ci, &mi, &oi])
            .status()
            .map_err(|e| BackfillError::Erase(format!("running {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(BackfillError::Erase(format!(
                "{} exited with {status}",
                self.program.display()
            )));
        }
        let out = Raster::load(&oi)?;
        if out.dims() != crop.dims() {
            return Err(BackfillError::Erase(format!(
                "output {:?} vs crop {:?}",
                out.dims(),
                crop.dims()
            )));
        }
        Ok(if crop.channels() == 3 { out.to_rgb() } else { out })
    }
}

/// Runs `backend` after checking that the mask matches the crop.
pub fn erase_text(crop: &Raster, mask: &Raster, backend: &dyn EraseBackend) -> Result<Raster, BackfillError> {
    if mask.dims() != crop.dims() {
        return Err(BackfillError::Dims(format!(
            "mask {:?} vs crop {:?}",
            mask.dims(),
            crop.dims()
        )));
    }
    let out = backend.erase(crop, mask)?;
    if out.dims() != crop.dims() {
        return Err(BackfillError::Erase(format!(
            "backend returned {:?} for {:?}",
            out.dims(),
            crop.dims()
        )));
    }
    Ok(out)
}
