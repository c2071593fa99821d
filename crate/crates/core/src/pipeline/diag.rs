use std::fs;
use std::path::PathBuf;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::run::Engine;
use crate::correspondence::refine_mask_detailed;
use crate::diffusion::noise::stream_id;
use crate::error::{Error, Result};
use crate::png_io::{voc_palette, write_label_png, write_rgb8, write_rgb_png};
use crate::recorded::sanitize_class;
use crate::types::{ImageTensor, SoftMask};

pub const DEFAULT_DIAG_POINTS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Arrow {
    /// Generated-image pixel `[y, x]`.
    pub from: [usize; 2],
    /// Matched original-image pixel `[y, x]`.
    pub to: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassArrows {
    pub class: String,
    pub arrows: Vec<Arrow>,
}

/// `n` distinct indices below `len`, by a seeded partial shuffle.
fn sample_indices(len: usize, n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..len).collect();
    let n = n.min(len);
    for i in 0..n {
        let j = i + (rng.next_u64() % (len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn from_image(img: &ImageTensor) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            rgb: img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        }
    }

    fn put(&mut self, y: i64, x: i64, color: [u8; 3]) {
        if y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width {
            let i = 3 * (y as usize * self.width + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&color);
        }
    }

    fn line(&mut self, (y0, x0): (i64, i64), (y1, x1): (i64, i64), color: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(y, x, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn dot(&mut self, (y, x): (i64, i64), color: [u8; 3]) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                self.put(y + dy, x + dx, color);
            }
        }
    }
}

fn gray(mask: &SoftMask) -> Vec<u8> {
    mask.values()
        .iter()
        .flat_map(|&v| [(v * 255.0).round() as u8; 3])
        .collect()
}

/// Writes overlays for one sample under `<out>/diag/<id>/`: the original and
/// generated images, correspondence arrows for `points` sampled feature-grid
/// pixels per class, soft maps before and after mixing, assembled masks, and
/// `arrows.json`. Returns the directory.
pub fn dump_diagnostics(engine: &Engine, sample_id: &str, points: usize) -> Result<PathBuf> {
    let prompts = engine.layout().prompts()?;
    let classes = prompts
        .get(sample_id)
        .ok_or_else(|| Error::invalid(format!("sample {sample_id:?} not in prompts.json")))?;
    let out = engine.process(sample_id, classes)?;
    let dir = engine.layout().out.join("diag").join(sample_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    write_rgb_png(dir.join("image.png"), &out.image)?;
    write_label_png(dir.join("before.png"), &out.coarse)?;
    write_label_png(dir.join("after.png"), &out.refined)?;

    let palette = voc_palette();
    let cfg = engine.config();
    let mut all = Vec::new();
    for c in &out.classes {
        let name = sanitize_class(&c.coarse.name);
        let r = refine_mask_detailed(
            &out.image,
            &c.generated,
            &c.coarse.soft,
            engine.extractor(),
            &cfg.mix(),
            sample_id,
            &c.coarse.name,
        )?;
        write_rgb_png(dir.join(format!("generated_{name}.png")), &c.generated)?;
        let (mh, mw) = c.coarse.soft.dims();
        write_rgb8(&dir.join(format!("soft_before_{name}.png")), mw, mh, &gray(&c.coarse.soft))?;
        write_rgb8(&dir.join(format!("soft_after_{name}.png")), mw, mh, &gray(&c.refined.soft))?;

        let (gh, gw) = r.correspondence.grid();
        let (ih, iw) = (out.image.height(), out.image.width());
        let to_image = |i: usize| [((i / gw) * 2 + 1) * ih / (2 * gh), ((i % gw) * 2 + 1) * iw / (2 * gw)];
        let picks = sample_indices(gh * gw, points, cfg.seed, stream_id(&format!("diag/{sample_id}/{}", c.coarse.name)));
        let mut canvas = Canvas::from_image(&out.image);
        let mut arrows = Vec::with_capacity(picks.len());
        for (k, &j) in picks.iter().enumerate() {
            let (from, to) = (to_image(j), to_image(r.correspondence.indices()[j]));
            let color = palette[1 + k % 254];
            let p = |a: [usize; 2]| (a[0] as i64, a[1] as i64);
            canvas.line(p(from), p(to), color);
            canvas.dot(p(from), color);
            arrows.push(Arrow { from, to });
        }
        write_rgb8(&dir.join(format!("arrows_{name}.png")), canvas.width, canvas.height, &canvas.rgb)?;
        all.push(ClassArrows {
            class: c.coarse.name.clone(),
            arrows,
        });
    }
    let json = serde_json::to_string_pretty(&all).expect("arrows serialize") + "\n";
    let path = dir.join("arrows.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}
