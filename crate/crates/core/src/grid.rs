//! Split computational domain: two half-plane sheets glued along the line
//! x2 = 0, each carrying its own copy of the interface row so that fields may
//! jump across it.

use crate::kernels::TraceFn;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    BadDims(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    Format(String),
}

/// Which sheet of the split domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// Uniform tensor grid on [-Lx, Lx] x [0, Ly] per sheet. Row i = 0 is the
/// interface; row i sits at signed height  side * i * dy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitGrid {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Validated constructor; `nx` even and >= 8, `ny` >= 4.
pub fn make_grid(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<SplitGrid, GridError> {
    if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
        return Err(GridError::BadDims(format!("extents must be positive, got {lx}, {ly}")));
    }
    if nx < 8 || nx % 2 != 0 {
        return Err(GridError::BadDims(format!("nx must be even and >= 8, got {nx}")));
    }
    if ny < 4 {
        return Err(GridError::BadDims(format!("ny must be >= 4, got {ny}")));
    }
    Ok(SplitGrid { lx, ly, nx, ny })
}

impl SplitGrid {
    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn ncols(&self) -> usize {
        self.nx + 1
    }
    pub fn nrows(&self) -> usize {
        self.ny + 1
    }
    pub fn x1(&self, j: usize) -> f64 {
        -self.lx + j as f64 * self.dx()
    }
    /// Signed height of row i on the given side.
    pub fn x2(&self, side: Side, i: usize) -> f64 {
        side.sign() * i as f64 * self.dy()
    }
    /// Trapezoid column weights (dx, halved at the extreme columns).
    pub fn wx(&self, j: usize) -> f64 {
        if j == 0 || j == self.nx {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }
    /// Trapezoid row weights (dy, halved at the interface and the far edge).
    pub fn wy(&self, i: usize) -> f64 {
        if i == 0 || i == self.ny {
            0.5 * self.dy()
        } else {
            self.dy()
        }
    }
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.ncols() + j
    }
}

/// Scalar field on a split grid; each sheet is (ny+1) x (nx+1) row-major with
/// row 0 on the interface.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitField {
    pub grid: SplitGrid,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl SplitField {
    pub fn zeros(grid: SplitGrid) -> Self {
        let n = grid.nrows() * grid.ncols();
        SplitField { grid, upper: vec![0.0; n], lower: vec![0.0; n] }
    }

    /// Samples f(x1, x2) with signed x2 on both sheets.
    pub fn from_fn(grid: SplitGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.nrows() {
            for j in 0..grid.ncols() {
                let x1 = grid.x1(j);
                out.upper[grid.node(i, j)] = f(x1, grid.x2(Side::Plus, i));
                out.lower[grid.node(i, j)] = f(x1, grid.x2(Side::Minus, i));
            }
        }
        out
    }

    pub fn sheet(&self, side: Side) -> &[f64] {
        match side {
            Side::Plus => &self.upper,
            Side::Minus => &self.lower,
        }
    }

    pub fn sheet_mut(&mut self, side: Side) -> &mut Vec<f64> {
        match side {
            Side::Plus => &mut self.upper,
            Side::Minus => &mut self.lower,
        }
    }

    pub fn at(&self, side: Side, i: usize, j: usize) -> f64 {
        self.sheet(side)[self.grid.node(i, j)]
    }

    /// Interface values of one sheet as a trace function on the x1 grid.
    pub fn trace(&self, side: Side) -> TraceFn {
        let g = &self.grid;
        let values = self.sheet(side)[..g.ncols()].to_vec();
        TraceFn::new(-g.lx, g.dx(), values).expect("grid invariants guarantee a valid trace")
    }

    /// One-sided second-order normal derivative on the interface, oriented
    /// along +x2 on both sheets (exact for fields quadratic in x2).
    pub fn normal_derivative(&self, side: Side) -> TraceFn {
        let g = &self.grid;
        let sheet = self.sheet(side);
        let dy = g.dy();
        let mut values = Vec::with_capacity(g.ncols());
        for j in 0..g.ncols() {
            let f0 = sheet[g.node(0, j)];
            let f1 = sheet[g.node(1, j)];
            let f2 = sheet[g.node(2, j)];
            let inward = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * dy);
            values.push(side.sign() * inward);
        }
        TraceFn::new(-g.lx, g.dx(), values).expect("grid invariants guarantee a valid trace")
    }

    /// Integral of the field over both sheets (trapezoid weights).
    pub fn mass(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let w = g.wx(j) * g.wy(i);
                s += w * (self.upper[g.node(i, j)] + self.lower[g.node(i, j)]);
            }
        }
        s
    }

    /// Weighted L2 inner product over both sheets.
    pub fn dot_w(&self, other: &SplitField) -> f64 {
        assert_eq!(self.grid, other.grid, "fields must share a grid");
        let g = &self.grid;
        let mut s = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let w = g.wx(j) * g.wy(i);
                let p = g.node(i, j);
                s += w * (self.upper[p] * other.upper[p] + self.lower[p] * other.lower[p]);
            }
        }
        s
    }

    pub fn norm_w(&self) -> f64 {
        self.dot_w(self).sqrt()
    }

    /// Bilinear interpolation at (x1, x2signed) on the sheet holding that
    /// sign; coordinates are clamped to the domain.
    pub fn interp(&self, side: Side, x1: f64, x2_abs: f64) -> f64 {
        let g = &self.grid;
        let sheet = self.sheet(side);
        let fx = ((x1 + g.lx) / g.dx()).clamp(0.0, g.nx as f64);
        let fy = (x2_abs.abs() / g.dy()).clamp(0.0, g.ny as f64);
        let j = (fx.floor() as usize).min(g.nx - 1);
        let i = (fy.floor() as usize).min(g.ny - 1);
        let tx = fx - j as f64;
        let ty = fy - i as f64;
        let v00 = sheet[g.node(i, j)];
        let v01 = sheet[g.node(i, j + 1)];
        let v10 = sheet[g.node(i + 1, j)];
        let v11 = sheet[g.node(i + 1, j + 1)];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
    }
}

/// Weighted L2 distance between two fields on the same grid.
pub fn l2_diff(f: &SplitField, g: &SplitField) -> f64 {
    assert_eq!(f.grid, g.grid, "fields must share a grid");
    let gr = &f.grid;
    let mut s = 0.0;
    for i in 0..gr.nrows() {
        for j in 0..gr.ncols() {
            let w = gr.wx(j) * gr.wy(i);
            let p = gr.node(i, j);
            s += w * ((f.upper[p] - g.upper[p]).powi(2) + (f.lower[p] - g.lower[p]).powi(2));
        }
    }
    s.sqrt()
}

/// Binary layout: five little-endian u64 (nx, ny, Lx bits, Ly bits, format
/// version), then the upper and lower sheets row-major as little-endian f64.
pub fn save_binary(field: &SplitField, path: &Path) -> Result<(), GridError> {
    let g = &field.grid;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in [g.nx as u64, g.ny as u64, g.lx.to_bits(), g.ly.to_bits(), FORMAT_VERSION] {
        f.write_all(&v.to_le_bytes())?;
    }
    for sheet in [&field.upper, &field.lower] {
        for v in sheet {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<SplitField, GridError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut u64buf = [0u8; 8];
    let mut header = [0u64; 5];
    for h in header.iter_mut() {
        f.read_exact(&mut u64buf)?;
        *h = u64::from_le_bytes(u64buf);
    }
    if header[4] != FORMAT_VERSION {
        return Err(GridError::Format(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header[4]
        )));
    }
    let grid = make_grid(
        f64::from_bits(header[2]),
        f64::from_bits(header[3]),
        header[0] as usize,
        header[1] as usize,
    )?;
    let n = grid.nrows() * grid.ncols();
    let mut read_sheet = |n: usize| -> Result<Vec<f64>, GridError> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            f.read_exact(&mut u64buf)?;
            v.push(f64::from_le_bytes(u64buf));
        }
        Ok(v)
    };
    let upper = read_sheet(n)?;
    let lower = read_sheet(n)?;
    Ok(SplitField { grid, upper, lower })
}

/// Plain x1,x2,value rows, upper sheet then lower sheet.
pub fn save_csv(field: &SplitField, path: &Path) -> Result<(), GridError> {
    let g = &field.grid;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x1,x2,value")?;
    for (side, sheet) in [(Side::Plus, &field.upper), (Side::Minus, &field.lower)] {
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                writeln!(f, "{},{},{}", g.x1(j), g.x2(side, i), sheet[g.node(i, j)])?;
            }
        }
    }
    Ok(())
}
