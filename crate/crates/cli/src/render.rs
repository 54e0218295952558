//! Stick-figure rendering of motions to per-frame SVG and an animated GIF.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use gcndance::skeleton::{Motion, BODY25_EDGES, JOINTS};

use crate::error::CliError;

pub const SIZE: u16 = 256;
const MARGIN: f64 = 16.0;

/// Affine map from motion coordinates to the square image, shared by all
/// frames so the figure does not jump around.
#[derive(Debug, Clone, Copy)]
struct Layout {
    scale: f64,
    dx: f64,
    dy: f64,
}

impl Layout {
    fn of(m: &Motion) -> Result<Layout, CliError> {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for (t, p) in m.frames.iter().enumerate() {
            let b = p.bbox().ok_or_else(|| CliError::Data(format!("frame {t} has no visible joints")))?;
            if b[2] - b[0] == 0.0 && b[3] - b[1] == 0.0 {
                return Err(CliError::Data(format!("frame {t} is a degenerate single-point pose")));
            }
            bb = [bb[0].min(b[0]), bb[1].min(b[1]), bb[2].max(b[2]), bb[3].max(b[3])];
        }
        let span = (bb[2] - bb[0]).max(bb[3] - bb[1]);
        let scale = (SIZE as f64 - 2.0 * MARGIN) / span;
        let dx = (SIZE as f64 - (bb[2] - bb[0]) * scale) / 2.0 - bb[0] * scale;
        let dy = (SIZE as f64 - (bb[3] - bb[1]) * scale) / 2.0 - bb[1] * scale;
        Ok(Layout { scale, dx, dy })
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (p[0] * self.scale + self.dx, p[1] * self.scale + self.dy)
    }
}

/// One SVG document per frame: every skeleton edge as a `<line>` and every
/// joint as a `<circle>`. Edges touching a missing joint are kept but hidden.
pub fn frame_svgs(m: &Motion) -> Result<Vec<String>, CliError> {
    let layout = Layout::of(m)?;
    Ok(m.frames
        .iter()
        .map(|p| {
            let mut s = String::new();
            let _ = writeln!(
                s,
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
            );
            let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
            for &(a, b) in &BODY25_EDGES {
                let (x1, y1) = layout.map(p.joints[a]);
                let (x2, y2) = layout.map(p.joints[b]);
                let vis = if p.is_present(a) && p.is_present(b) { "" } else { r#" visibility="hidden""# };
                let _ = writeln!(
                    s,
                    r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="2"{vis}/>"#
                );
            }
            for j in (0..JOINTS).filter(|&j| p.is_present(j)) {
                let (x, y) = layout.map(p.joints[j]);
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="crimson"/>"#);
            }
            s.push_str("</svg>\n");
            s
        })
        .collect())
}

fn draw_line(px: &mut [u8], a: (f64, f64), b: (f64, f64), color: u8) {
    let n = SIZE as i64;
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            let (x, y) = (x0 + ox, y0 + oy);
            if (0..n).contains(&x) && (0..n).contains(&y) {
                px[(y * n + x) as usize] = color;
            }
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Indexed raster of one frame: 0 background, 1 bone.
fn rasterize(m: &Motion, layout: &Layout, t: usize) -> Vec<u8> {
    let mut px = vec![0u8; SIZE as usize * SIZE as usize];
    let p = &m.frames[t];
    for &(a, b) in &BODY25_EDGES {
        if p.is_present(a) && p.is_present(b) {
            draw_line(&mut px, layout.map(p.joints[a]), layout.map(p.joints[b]), 1);
        }
    }
    px
}

pub fn write_gif(m: &Motion, path: &Path) -> Result<(), CliError> {
    let layout = Layout::of(m)?;
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let palette = [255, 255, 255, 0, 0, 0];
    let mut enc = gif::Encoder::new(BufWriter::new(file), SIZE, SIZE, &palette)
        .map_err(|e| CliError::Data(format!("gif: {e}")))?;
    enc.set_repeat(gif::Repeat::Infinite).map_err(|e| CliError::Data(format!("gif: {e}")))?;
    let delay = (100.0 / m.fps.max(1) as f64).round() as u16;
    for t in 0..m.len() {
        let mut frame = gif::Frame::from_indexed_pixels(SIZE, SIZE, rasterize(m, &layout, t), None);
        frame.delay = delay;
        enc.write_frame(&frame).map_err(|e| CliError::Data(format!("gif: {e}")))?;
    }
    Ok(())
}

/// Writes `frame_0000.svg ...` and `motion.gif` into `dir`.
pub fn render_motion(m: &Motion, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let svgs = frame_svgs(m)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::with_capacity(svgs.len() + 1);
    for (t, svg) in svgs.iter().enumerate() {
        let p = dir.join(format!("frame_{t:04}.svg"));
        std::fs::write(&p, svg).map_err(|e| CliError::io(&p, e))?;
        out.push(p);
    }
    let gif = dir.join("motion.gif");
    write_gif(m, &gif)?;
    out.push(gif);
    Ok(out)
}
