//! Deterministic raster depiction and the rotation augmentation.

mod font;
pub mod layout;

use std::io::{self, Read, Write};

pub use layout::{layout_2d, Layout2D, Point};

use crate::molecule::{BondOrder, Molecule};

pub const DEFAULT_RESOLUTION: usize = 64;
const MARGIN: f64 = 0.1;
/// Largest bond length in pixels as a fraction of the image side, so small
/// molecules are not blown up to fill the frame.
const MAX_BOND_FRACTION: f64 = 0.22;
const FRAGMENT_GAP: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("molecule has more than one fragment")]
    DisconnectedMolecule,
    #[error("image is {width}x{height}, not square")]
    NonSquareImage { width: usize, height: usize },
    #[error("resolution {0} is too small to draw into")]
    ResolutionTooSmall(usize),
    #[error("malformed PPM: {0}")]
    MalformedPpm(String),
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MolImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

/// Label colour per element; carbon and anything unlisted draw in black.
pub fn element_color(z: u8) -> [u8; 3] {
    match z {
        7 => [0, 0, 255],
        8 => [255, 0, 0],
        9 | 17 => [0, 160, 0],
        35 => [153, 51, 0],
        53 => [148, 0, 211],
        15 => [255, 128, 0],
        16 => [178, 152, 0],
        5 => [255, 102, 102],
        _ => BLACK,
    }
}

impl MolImage {
    pub fn blank(width: usize, height: usize) -> Self {
        MolImage {
            width,
            height,
            pixels: vec![255; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn non_white_count(&self) -> usize {
        self.pixels.chunks(3).filter(|p| *p != WHITE).count()
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 16);
        self.write_ppm(&mut out).expect("writing to memory");
        out
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, RenderError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| RenderError::MalformedPpm(e.to_string()))?;
        Self::from_ppm(&bytes)
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, RenderError> {
        let bad = |m: &str| RenderError::MalformedPpm(m.to_string());
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("header is not text"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("expected P6 magic"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit images are supported"));
        }
        let data = &bytes[i + 1..];
        if data.len() != width * height * 3 {
            return Err(bad("pixel data length does not match header"));
        }
        Ok(MolImage {
            width,
            height,
            pixels: data.to_vec(),
        })
    }

    /// Quarter turn clockwise.
    pub fn rot90(&self) -> Result<MolImage, RenderError> {
        if self.width != self.height {
            return Err(RenderError::NonSquareImage {
                width: self.width,
                height: self.height,
            });
        }
        let n = self.width;
        let mut out = MolImage::blank(n, n);
        for y in 0..n {
            for x in 0..n {
                // source (x, y) lands at (n-1-y, x)
                let c = self.get(x, y);
                out.set((n - 1 - y) as i64, x as i64, c);
            }
        }
        Ok(out)
    }
}

/// `[identity, rot90, rot180, rot270]`.
pub fn augment_rotations(img: &MolImage) -> Result<[MolImage; 4], RenderError> {
    let r1 = img.rot90()?;
    let r2 = r1.rot90()?;
    let r3 = r2.rot90()?;
    Ok([img.clone(), r1, r2, r3])
}

/// Layout of any molecule: each fragment laid out separately, then tiled
/// left to right.
pub fn layout_fragments(m: &Molecule) -> Layout2D {
    let comps = m.components();
    let mut coords = vec![[0.0, 0.0]; m.atom_count()];
    let mut refined = false;
    let mut cursor = 0.0;
    for comp in comps {
        let sub = m.subgraph(&comp);
        let l = layout_2d(&sub).expect("a component is connected");
        refined |= l.refined;
        let min_x = l.coords.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = l.coords.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = l.coords.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = l.coords.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let mid_y = (min_y + max_y) / 2.0;
        for (k, &a) in comp.iter().enumerate() {
            coords[a] = [l.coords[k][0] - min_x + cursor, l.coords[k][1] - mid_y];
        }
        cursor += max_x - min_x + FRAGMENT_GAP;
    }
    Layout2D { coords, refined }
}

fn label_text(m: &Molecule, i: usize) -> Option<String> {
    let a = m.atom(i);
    if a.atomic_number == 6 && a.charge == 0 && m.degree(i) > 0 {
        return None;
    }
    let mut s = a.symbol().to_string();
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("{c}+")),
        c => s.push_str(&format!("{}-", -c)),
    }
    Some(s)
}

/// Pixels of a Bresenham line, endpoints included.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::new();
    loop {
        out.push((x, y));
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
    out
}

struct Canvas {
    img: MolImage,
}

impl Canvas {
    fn line(&mut self, a: [f64; 2], b: [f64; 2], dotted: bool) {
        let pts = bresenham(a[0].round() as i64, a[1].round() as i64, b[0].round() as i64, b[1].round() as i64);
        for (k, (x, y)) in pts.into_iter().enumerate() {
            if dotted && k % 2 == 1 {
                continue;
            }
            self.img.set(x, y, BLACK);
        }
    }
}

/// Renders a molecule at `res`×`res` pixels.
pub fn render(m: &Molecule, res: usize) -> Result<MolImage, RenderError> {
    if res < 16 {
        return Err(RenderError::ResolutionTooSmall(res));
    }
    let mut canvas = Canvas {
        img: MolImage::blank(res, res),
    };
    if m.is_empty() {
        return Ok(canvas.img);
    }
    let layout = layout_fragments(m);
    let min_x = layout.coords.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = layout.coords.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = layout.coords.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = layout.coords.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let inner = res as f64 * (1.0 - 2.0 * MARGIN);
    let span = (max_x - min_x).max(max_y - min_y);
    let mut scale = res as f64 * MAX_BOND_FRACTION;
    if span > 0.0 {
        scale = scale.min(inner / span);
    }
    let glyph_scale = (res / 128).max(1);
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let half = (res as f64 - 1.0) / 2.0;
    // y grows downwards in the image
    let px: Vec<[f64; 2]> = layout
        .coords
        .iter()
        .map(|p| [half + (p[0] - cx) * scale, half - (p[1] - cy) * scale])
        .collect();

    let offset = (scale * 0.18).max(2.0);
    for bond in m.bonds() {
        let (a, b) = (px[bond.begin], px[bond.end]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let mut normal = [-dy / len, dx / len];
        // second lines of ring bonds go towards the ring centre
        if let Some(ring) = m
            .rings()
            .iter()
            .filter(|r| r.contains(&bond.begin) && r.contains(&bond.end))
            .min_by_key(|r| r.len())
        {
            let c = ring.iter().fold([0.0, 0.0], |acc, &i| [acc[0] + px[i][0], acc[1] + px[i][1]]);
            let c = [c[0] / ring.len() as f64, c[1] / ring.len() as f64];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            if (c[0] - mid[0]) * normal[0] + (c[1] - mid[1]) * normal[1] < 0.0 {
                normal = [-normal[0], -normal[1]];
            }
        }
        let shift = |p: [f64; 2], k: f64| [p[0] + normal[0] * offset * k, p[1] + normal[1] * offset * k];
        let shrink = |p: [f64; 2], q: [f64; 2]| [p[0] + (q[0] - p[0]) * 0.15, p[1] + (q[1] - p[1]) * 0.15];
        canvas.line(a, b, false);
        match bond.order {
            BondOrder::Single => {}
            BondOrder::Double | BondOrder::Aromatic => {
                let (a2, b2) = if bond.in_ring { (shrink(a, b), shrink(b, a)) } else { (a, b) };
                canvas.line(shift(a2, 1.0), shift(b2, 1.0), bond.order == BondOrder::Aromatic);
            }
            BondOrder::Triple => {
                canvas.line(shift(a, 1.0), shift(b, 1.0), false);
                canvas.line(shift(a, -1.0), shift(b, -1.0), false);
            }
        }
    }

    let gw = font::GLYPH_WIDTH * glyph_scale;
    let gh = font::GLYPH_HEIGHT * glyph_scale;
    for i in 0..m.atom_count() {
        let Some(text) = label_text(m, i) else { continue };
        let glyphs: Vec<[&str; 7]> = text.chars().filter_map(font::glyph).collect();
        let width = glyphs.len() * gw + glyphs.len().saturating_sub(1) * glyph_scale;
        let x0 = px[i][0].round() as i64 - (gw as i64) / 2;
        let y0 = px[i][1].round() as i64 - (gh as i64) / 2;
        for y in y0 - 1..=y0 + gh as i64 {
            for x in x0 - 1..=x0 + width as i64 {
                canvas.img.set(x, y, WHITE);
            }
        }
        let color = element_color(m.atom(i).atomic_number);
        for (k, g) in glyphs.iter().enumerate() {
            let gx = x0 + (k * (gw + glyph_scale)) as i64;
            for (row, bits) in g.iter().enumerate() {
                for (col, ch) in bits.chars().enumerate() {
                    if ch != '#' {
                        continue;
                    }
                    for sy in 0..glyph_scale {
                        for sx in 0..glyph_scale {
                            canvas.img.set(
                                gx + (col * glyph_scale + sx) as i64,
                                y0 + (row * glyph_scale + sy) as i64,
                                color,
                            );
                        }
                    }
                }
            }
        }
    }
    // a bond hidden entirely under labels keeps one black pixel on its centre line
    for bond in m.bonds() {
        let (a, b) = (px[bond.begin], px[bond.end]);
        let line = bresenham(a[0].round() as i64, a[1].round() as i64, b[0].round() as i64, b[1].round() as i64);
        let inked = line.iter().any(|&(x, y)| canvas.img.get(x as usize, y as usize) == BLACK);
        if !inked {
            let (x, y) = line[line.len() / 2];
            canvas.img.set(x, y, BLACK);
        }
    }
    Ok(canvas.img)
}

/// Pixel centre of every atom as used by [`render`].
pub fn atom_pixels(m: &Molecule, res: usize) -> Vec<(i64, i64)> {
    let layout = layout_fragments(m);
    if layout.coords.is_empty() {
        return Vec::new();
    }
    let min_x = layout.coords.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = layout.coords.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = layout.coords.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = layout.coords.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let inner = res as f64 * (1.0 - 2.0 * MARGIN);
    let span = (max_x - min_x).max(max_y - min_y);
    let mut scale = res as f64 * MAX_BOND_FRACTION;
    if span > 0.0 {
        scale = scale.min(inner / span);
    }
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let half = (res as f64 - 1.0) / 2.0;
    layout
        .coords
        .iter()
        .map(|p| {
            (
                (half + (p[0] - cx) * scale).round() as i64,
                (half - (p[1] - cy) * scale).round() as i64,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    #[test]
    fn bresenham_endpoints_and_length() {
        let l = bresenham(0, 0, 5, 2);
        assert_eq!(l.first(), Some(&(0, 0)));
        assert_eq!(l.last(), Some(&(5, 2)));
        assert_eq!(l.len(), 6);
        assert_eq!(bresenham(3, 3, 3, 3), vec![(3, 3)]);
    }

    #[test]
    fn methane_is_visible() {
        let img = render(&parse_smiles("C").unwrap(), 64).unwrap();
        assert!(img.non_white_count() > 0);
    }

    #[test]
    fn ppm_round_trip() {
        let img = render(&parse_smiles("CCO").unwrap(), 32).unwrap();
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
        assert_eq!(MolImage::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn rotation_rejects_non_square() {
        assert_eq!(
            MolImage::blank(4, 3).rot90(),
            Err(RenderError::NonSquareImage { width: 4, height: 3 })
        );
    }
}
