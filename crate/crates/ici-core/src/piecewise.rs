//! Piecewise-constant coefficient tables in one and two variables.
//!
//! Every model coefficient is a deterministic piecewise-constant table, so
//! all time and maturity integrals reduce to exact finite sums. That removes
//! quadrature tolerances from the oracles built on top of these tables.

use crate::error::{Error, Result};

/// Right-continuous piecewise-constant function of one variable.
///
/// `breaks[i]` is the left edge of piece `i`; the last piece extends to
/// `end`. Values are constant on `[breaks[i], breaks[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piecewise {
    breaks: Vec<f64>,
    values: Vec<f64>,
    end: f64,
}

impl Piecewise {
    /// Builds a table from piece left-edges and values on `[start, end]`.
    ///
    /// The first break must equal the domain start; breaks must be strictly
    /// increasing and below `end`.
    pub fn new(breaks: Vec<f64>, values: Vec<f64>, end: f64) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return Err(Error::InvalidInput(
                "piecewise table needs matching, nonempty breaks and values".into(),
            ));
        }
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput(
                    "piecewise breaks must be strictly increasing".into(),
                ));
            }
        }
        if *breaks.last().unwrap() >= end {
            return Err(Error::InvalidInput(
                "last piecewise break must lie before the domain end".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("piecewise values must be finite".into()));
        }
        Ok(Self { breaks, values, end })
    }

    /// Constant function on `[0, end]`.
    pub fn constant(value: f64, end: f64) -> Self {
        Self::new(vec![0.0], vec![value], end).expect("constant table is always valid")
    }

    /// Domain start.
    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    /// Domain end.
    pub fn end(&self) -> f64 {
        self.end
    }

    /// Piece index covering `t` (the last piece also covers `t == end`).
    fn piece_index(&self, t: f64) -> usize {
        match self.breaks.binary_search_by(|b| b.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Value at `t`; errors outside the domain.
    pub fn value(&self, t: f64) -> Result<f64> {
        if t < self.start() || t > self.end {
            return Err(Error::TimeOutOfRange { t, lo: self.start(), hi: self.end });
        }
        Ok(self.values[self.piece_index(t)])
    }

    /// Value at `t` clamped into the domain; useful for midpoint evaluation
    /// at the domain boundary.
    pub fn value_clamped(&self, t: f64) -> f64 {
        let t = t.clamp(self.start(), self.end);
        self.values[self.piece_index(t)]
    }

    /// Exact integral over `[a, b]` (piecewise sum; `a <= b` required).
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidInput("integral bounds out of order".into()));
        }
        if a < self.start() || b > self.end {
            return Err(Error::TimeOutOfRange { t: if a < self.start() { a } else { b }, lo: self.start(), hi: self.end });
        }
        let mut total = 0.0;
        let mut lo = a;
        let mut i = self.piece_index(a);
        while lo < b {
            let hi = if i + 1 < self.breaks.len() { self.breaks[i + 1].min(b) } else { b };
            total += self.values[i] * (hi - lo);
            lo = hi;
            i += 1;
        }
        Ok(total)
    }

    /// Largest absolute value over the table.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Smallest value over the table.
    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    /// Piece left edges.
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// Piece values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Piecewise-constant function of `(t, s)` on a product grid, used for the
/// forward-curve loading tables where `s` is the running maturity variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSurface {
    t_breaks: Vec<f64>,
    s_breaks: Vec<f64>,
    /// Row per t-cell, column per s-cell.
    values: Vec<Vec<f64>>,
    t_end: f64,
    s_end: f64,
}

impl PiecewiseSurface {
    /// Builds a surface table; shapes must match the break vectors.
    pub fn new(
        t_breaks: Vec<f64>,
        s_breaks: Vec<f64>,
        values: Vec<Vec<f64>>,
        t_end: f64,
        s_end: f64,
    ) -> Result<Self> {
        let check_axis = |breaks: &[f64], end: f64, name: &str| -> Result<()> {
            if breaks.is_empty() {
                return Err(Error::InvalidInput(format!("surface {name} breaks empty")));
            }
            for w in breaks.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::InvalidInput(format!(
                        "surface {name} breaks must be strictly increasing"
                    )));
                }
            }
            if *breaks.last().unwrap() >= end {
                return Err(Error::InvalidInput(format!(
                    "last surface {name} break must lie before the domain end"
                )));
            }
            Ok(())
        };
        check_axis(&t_breaks, t_end, "t")?;
        check_axis(&s_breaks, s_end, "s")?;
        if values.len() != t_breaks.len() || values.iter().any(|row| row.len() != s_breaks.len()) {
            return Err(Error::InvalidInput("surface value shape mismatch".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("surface values must be finite".into()));
        }
        Ok(Self { t_breaks, s_breaks, values, t_end, s_end })
    }

    /// Constant surface on `[0, t_end] x [0, s_end]`.
    pub fn constant(value: f64, t_end: f64, s_end: f64) -> Self {
        Self::new(vec![0.0], vec![0.0], vec![vec![value]], t_end, s_end)
            .expect("constant surface is always valid")
    }

    /// Zero surface, the common case for unused loadings.
    pub fn zero(t_end: f64, s_end: f64) -> Self {
        Self::constant(0.0, t_end, s_end)
    }

    fn cell(breaks: &[f64], x: f64) -> usize {
        match breaks.binary_search_by(|b| b.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Value at `(t, s)`; errors outside the domain.
    pub fn value(&self, t: f64, s: f64) -> Result<f64> {
        if t < self.t_breaks[0] || t > self.t_end {
            return Err(Error::TimeOutOfRange { t, lo: self.t_breaks[0], hi: self.t_end });
        }
        if s < self.s_breaks[0] || s > self.s_end {
            return Err(Error::TimeOutOfRange { t: s, lo: self.s_breaks[0], hi: self.s_end });
        }
        Ok(self.values[Self::cell(&self.t_breaks, t)][Self::cell(&self.s_breaks, s)])
    }

    /// Exact integral over `s` in `[a, b]` at fixed `t`.
    pub fn integral_s(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidInput("integral bounds out of order".into()));
        }
        if t < self.t_breaks[0] || t > self.t_end {
            return Err(Error::TimeOutOfRange { t, lo: self.t_breaks[0], hi: self.t_end });
        }
        if a < self.s_breaks[0] || b > self.s_end {
            return Err(Error::TimeOutOfRange { t: if a < self.s_breaks[0] { a } else { b }, lo: self.s_breaks[0], hi: self.s_end });
        }
        let row = &self.values[Self::cell(&self.t_breaks, t)];
        let mut total = 0.0;
        let mut lo = a;
        let mut i = Self::cell(&self.s_breaks, a);
        while lo < b {
            let hi = if i + 1 < self.s_breaks.len() { self.s_breaks[i + 1].min(b) } else { b };
            total += row[i] * (hi - lo);
            lo = hi;
            i += 1;
        }
        Ok(total)
    }

    /// Exact integral over `t` in `[a, b]` at fixed `s`.
    pub fn integral_t(&self, s: f64, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidInput("integral bounds out of order".into()));
        }
        if s < self.s_breaks[0] || s > self.s_end {
            return Err(Error::TimeOutOfRange { t: s, lo: self.s_breaks[0], hi: self.s_end });
        }
        if a < self.t_breaks[0] || b > self.t_end {
            return Err(Error::TimeOutOfRange { t: if a < self.t_breaks[0] { a } else { b }, lo: self.t_breaks[0], hi: self.t_end });
        }
        let col = Self::cell(&self.s_breaks, s);
        let mut total = 0.0;
        let mut lo = a;
        let mut i = Self::cell(&self.t_breaks, a);
        while lo < b {
            let hi = if i + 1 < self.t_breaks.len() { self.t_breaks[i + 1].min(b) } else { b };
            total += self.values[i][col] * (hi - lo);
            lo = hi;
            i += 1;
        }
        Ok(total)
    }

    /// Largest absolute value over the table.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Exact integral of the table over the triangle `0 <= t' <= s' <= t`
    /// with the first axis as `t'` and the second as `s'`.
    ///
    /// Used to accumulate short-rate integrals where the curve drift at
    /// calendar time `t'` acts on all maturities `s' >= t'`.
    pub fn integral_triangle(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t > self.t_end || t > self.s_end {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: self.t_end.min(self.s_end) });
        }
        let mut total = 0.0;
        for (i, row) in self.values.iter().enumerate() {
            let a0 = self.t_breaks[i];
            let a1 = if i + 1 < self.t_breaks.len() { self.t_breaks[i + 1] } else { self.t_end }
                .min(t);
            if a1 <= a0 {
                continue;
            }
            for (j, &v) in row.iter().enumerate() {
                let b0 = self.s_breaks[j];
                let b1 = if j + 1 < self.s_breaks.len() { self.s_breaks[j + 1] } else { self.s_end }
                    .min(t);
                if b1 <= b0 || v == 0.0 {
                    continue;
                }
                // Area of the cell [a0,a1] x [b0,b1] under the constraint
                // first coordinate <= second coordinate.
                let lo = b0.max(a0);
                let mid = b1.min(a1).max(lo);
                let mut area = 0.0;
                if mid > lo {
                    area += 0.5 * ((mid - a0).powi(2) - (lo - a0).powi(2));
                }
                if b1 > a1.max(b0) {
                    area += (a1 - a0) * (b1 - a1.max(b0));
                }
                total += v * area;
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_value_and_integral() {
        let p = Piecewise::new(vec![0.0, 5.0], vec![0.01, 0.03], 10.0).unwrap();
        assert_eq!(p.value(0.0).unwrap(), 0.01);
        assert_eq!(p.value(4.999).unwrap(), 0.01);
        assert_eq!(p.value(5.0).unwrap(), 0.03);
        assert_eq!(p.value(10.0).unwrap(), 0.03);
        assert!((p.integral(0.0, 10.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((p.integral(4.0, 6.0).unwrap() - (0.01 + 0.03)).abs() < 1e-15);
        assert!(p.value(10.5).is_err());
    }

    #[test]
    fn surface_integrals_both_axes() {
        // sigma = -0.02 only for s in [10, 12].
        let s = PiecewiseSurface::new(
            vec![0.0],
            vec![0.0, 10.0],
            vec![vec![0.0, -0.02]],
            12.0,
            12.0,
        )
        .unwrap();
        for t in [0.0, 3.0, 9.99] {
            assert!((s.integral_s(t, t, 12.0).unwrap() - (-0.04)).abs() < 1e-15);
        }
        assert!((s.integral_s(11.0, 11.0, 12.0).unwrap() - (-0.02)).abs() < 1e-15);
        assert!((s.integral_t(11.0, 0.0, 12.0).unwrap() - (-0.24)).abs() < 1e-15);
        assert_eq!(s.integral_t(5.0, 0.0, 12.0).unwrap(), 0.0);
    }

    #[test]
    fn triangle_integral_matches_hand_values() {
        // Constant table: area of the triangle times the value.
        let c = PiecewiseSurface::constant(2.0, 4.0, 4.0);
        assert!((c.integral_triangle(3.0).unwrap() - 2.0 * 0.5 * 9.0).abs() < 1e-14);

        // Value depends on the first coordinate only: 1 before t'=1, 2 after.
        let s = PiecewiseSurface::new(
            vec![0.0, 1.0],
            vec![0.0],
            vec![vec![1.0], vec![2.0]],
            4.0,
            4.0,
        )
        .unwrap();
        // inner(s') = s' for s'<=1 and 2s'-1 after; integral to 2 is 2.5.
        assert!((s.integral_triangle(2.0).unwrap() - 2.5).abs() < 1e-14);
        assert_eq!(s.integral_triangle(0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(Piecewise::new(vec![0.0, 0.0], vec![1.0, 2.0], 10.0).is_err());
        assert!(Piecewise::new(vec![0.0, 11.0], vec![1.0, 2.0], 10.0).is_err());
        assert!(Piecewise::new(vec![0.0], vec![f64::NAN], 10.0).is_err());
    }
}
