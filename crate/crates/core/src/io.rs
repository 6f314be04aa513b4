//! File output: PGM images, flat CSV fields, iteration logs and JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::topopt::IterationRecord;
use crate::unitcell::{DensityField, ParallelogramCell};

/// Gray level of the cell outline in tiled images.
pub const OUTLINE_GRAY: u8 = 128;

fn gray(rho: f64, invert: bool) -> u8 {
    let v = (255.0 * rho.clamp(0.0, 1.0)).round() as u8;
    if invert {
        255 - v
    } else {
        v
    }
}

fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Binary PGM of the field, one pixel per element, top row first. Void is
/// black unless `invert` is set.
pub fn pgm(field: &DensityField, invert: bool) -> Vec<u8> {
    let (nx, ny) = (field.nx, field.ny);
    let mut px = Vec::with_capacity(nx * ny);
    for j in (0..ny).rev() {
        px.extend((0..nx).map(|i| gray(field.at(i, j), invert)));
    }
    pgm_bytes(nx, ny, &px)
}

/// Element containing the lattice point `(u, v)`, wrapped periodically.
fn element_at(field: &DensityField, u: f64, v: f64) -> f64 {
    let i = ((u - u.floor()) * field.nx as f64) as usize;
    let j = ((v - v.floor()) * field.ny as f64) as usize;
    field.at(i.min(field.nx - 1), j.min(field.ny - 1))
}

/// Square physical window of `tiles` × `tiles` cell widths, sampled at
/// `size` pixels per side, with cell boundaries drawn in gray.
pub fn tiled_pgm(field: &DensityField, tiles: usize, size: usize, invert: bool) -> Vec<u8> {
    let cell: &ParallelogramCell = &field.cell;
    let side = tiles as f64 * cell.area().sqrt();
    let px_len = side / size as f64;
    let lattice = |i: usize, j: usize| {
        let x = (i as f64 + 0.5) * px_len;
        let y = (j as f64 + 0.5) * px_len;
        let c = cell.lattice_coords([x, y]);
        (c[0], c[1])
    };
    let mut px = Vec::with_capacity(size * size);
    for j in (0..size).rev() {
        for i in 0..size {
            let (u, v) = lattice(i, j);
            let (ur, vr) = lattice(i + 1, j);
            let (uu, vu) = lattice(i, j + 1);
            let edge = [ur, uu].iter().any(|w| w.floor() != u.floor()) || [vr, vu].iter().any(|w| w.floor() != v.floor());
            px.push(if edge { OUTLINE_GRAY } else { gray(element_at(field, u, v), invert) });
        }
    }
    pgm_bytes(size, size, &px)
}

/// `nx,ny` on the first line, then one value per line in storage order.
pub fn field_csv(field: &DensityField) -> String {
    let mut s = format!("{},{}\n", field.nx, field.ny);
    for r in &field.rho {
        let _ = writeln!(s, "{r}");
    }
    s
}

/// Parses the format written by [`field_csv`].
pub fn parse_field_csv(text: &str, cell: ParallelogramCell) -> Result<DensityField> {
    let bad = |m: &str| Error::Io(format!("malformed field CSV: {m}"));
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad("empty"))?;
    let (a, b) = head.split_once(',').ok_or_else(|| bad("header"))?;
    let nx: usize = a.trim().parse().map_err(|_| bad("nx"))?;
    let ny: usize = b.trim().parse().map_err(|_| bad("ny"))?;
    let rho = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad(l)))
        .collect::<Result<Vec<_>>>()?;
    DensityField::new(nx, ny, rho, cell)
}

pub fn log_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from("iter,beta,objective,volume,max_design_change\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{},{}", r.iter, r.beta, r.objective, r.volume, r.max_design_change);
    }
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `field.pgm`, `field_tiled.pgm` and `field.csv` into `dir`.
pub fn write_field_images(dir: &Path, field: &DensityField, invert: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("field.pgm"), pgm(field, invert))?;
    let size = 2 * field.nx.max(field.ny);
    fs::write(dir.join("field_tiled.pgm"), tiled_pgm(field, 2, size, invert))?;
    fs::write(dir.join("field.csv"), field_csv(field))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> DensityField {
        let rho = (0..12).map(|k| k as f64 / 11.0).collect();
        DensityField::new(4, 3, rho, ParallelogramCell::unit_square()).unwrap()
    }

    #[test]
    fn pgm_layout() {
        let bytes = pgm(&ramp(), false);
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 12);
        // top row is j = 2
        assert_eq!(px[0], (255.0 * 8.0 / 11.0_f64).round() as u8);
        assert_eq!(px[11], (255.0 * 3.0 / 11.0_f64).round() as u8);
        assert_eq!(pgm(&ramp(), true)[header.len()], 255 - px[0]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut f = ramp();
        f.rho[5] = 0.1 + 0.2;
        let back = parse_field_csv(&field_csv(&f), ParallelogramCell::unit_square()).unwrap();
        assert_eq!(back.rho, f.rho);
        assert_eq!((back.nx, back.ny), (4, 3));
    }

    #[test]
    fn tiled_image_marks_cell_outline() {
        let f = DensityField::uniform(8, 8, 1.0, ParallelogramCell::unit_square()).unwrap();
        let bytes = tiled_pgm(&f, 2, 16, false);
        let px = &bytes[b"P5\n16 16\n255\n".len()..];
        let outline = px.iter().filter(|&&p| p == OUTLINE_GRAY).count();
        let solid = px.iter().filter(|&&p| p == 255).count();
        assert_eq!(outline + solid, 256);
        assert!((2 * 16..4 * 16).contains(&outline), "{outline}");
    }
}
