//! The discretized field on a moving window.
//!
//! Cell `i` of the window sits at the absolute lattice index `origin + i`, i.e.
//! at position `(origin + i) * dx`. Positions are never accumulated in floating
//! point, so shifting the window is an exact relabeling.
//!
//! Outside the window the field is `1` on the left and `0` on the right. The
//! state also tracks the exact flat regions: every cell before `lo` equals `1`
//! and every cell from `hi` on equals `0`, which lets the integrator touch
//! only the interface.
//!
//! Interface observables:
//!
//! ```text
//! R(u)  = sup { x : u(x) > 0 }          (rightmost cell above eps)
//! L(u)  = inf { x : u(x) < 1 }          (last cell of the leading run above 1 - eps)
//! Xi(u) = int_{x<0} (u - 1) dx + int_{x>=0} u dx
//! mass  = int u (1 - u) dx
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_FRONT: f64 = 1e-12;

/// Smallest admissible window, in cells.
pub const MIN_WINDOW_CELLS: usize = 100;

/// Which end of the window an interface ran into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePair {
    pub left: f64,
    pub right: f64,
    pub width: f64,
}

/// Window indices of the cells that define `L` and `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeCells {
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct FrontState {
    values: Vec<f64>,
    origin: i64,
    dx: f64,
    t: f64,
    lo: usize,
    hi: usize,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    values: Vec<f64>,
    origin: i64,
    dx: f64,
    t: f64,
}

impl TryFrom<RawState> for FrontState {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        FrontState::from_values(raw.values, raw.origin, raw.dx, raw.t)
    }
}

impl From<FrontState> for RawState {
    fn from(s: FrontState) -> Self {
        RawState { values: s.values, origin: s.origin, dx: s.dx, t: s.t }
    }
}

impl FrontState {
    /// Builds a state from explicit cell values; cell 0 sits at `origin * dx`.
    pub fn from_values(values: Vec<f64>, origin: i64, dx: f64, t: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Config(format!("dx must be positive, got {dx}")));
        }
        if values.is_empty() {
            return Err(Error::Config("a state needs at least one cell".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::Domain(format!("cell value {v} outside [0, 1]")));
        }
        let mut s = Self { values, origin, dx, t, lo: 0, hi: 0 };
        s.rescan_flat_regions();
        Ok(s)
    }

    /// Step data: `1` at cell centers left of `r0`, `0` from `r0` on, with `r0`
    /// at the window center.
    pub fn step(r0: f64, dx: f64, window: f64, t0: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Config(format!("dx must be positive, got {dx}")));
        }
        if !(window >= MIN_WINDOW_CELLS as f64 * dx) {
            return Err(Error::Config(format!(
                "window {window} is narrower than {MIN_WINDOW_CELLS} cells of width {dx}"
            )));
        }
        let n = (window / dx).round() as usize;
        let mut first_zero = (r0 / dx).ceil() as i64;
        while ((first_zero - 1) as f64) * dx >= r0 {
            first_zero -= 1;
        }
        while (first_zero as f64) * dx < r0 {
            first_zero += 1;
        }
        let half = n / 2;
        let mut values = vec![0.0; n];
        values[..half].fill(1.0);
        Ok(Self { values, origin: first_zero - half as i64, dx, t: t0, lo: half, hi: half })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn set_t(&mut self, t: f64) {
        self.t = t;
    }

    /// Absolute lattice index of cell 0.
    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Absolute coordinate of cell 0.
    pub fn offset(&self) -> f64 {
        self.origin as f64 * self.dx
    }

    #[inline]
    pub fn cell_x(&self, i: usize) -> f64 {
        (self.origin + i as i64) as f64 * self.dx
    }

    /// `(lo, hi)`: cells before `lo` are exactly 1, cells from `hi` on are exactly 0.
    pub fn flat_regions(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    pub(crate) fn raw_parts_mut(&mut self) -> (&mut Vec<f64>, &mut usize, &mut usize) {
        (&mut self.values, &mut self.lo, &mut self.hi)
    }

    fn rescan_flat_regions(&mut self) {
        let n = self.values.len();
        self.lo = self.values.iter().position(|&v| v != 1.0).unwrap_or(n);
        self.hi = self.values.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1);
        if self.hi < self.lo {
            self.hi = self.lo;
        }
    }

    /// Window indices of the cells defining `L` and `R`.
    pub fn edge_cells(&self, eps_front: f64) -> Result<EdgeCells> {
        if !(eps_front >= 0.0 && eps_front < 0.5) {
            return Err(Error::Domain(format!("eps_front must lie in [0, 1/2), got {eps_front}")));
        }
        let n = self.values.len();
        if self.values[0] <= 1.0 - eps_front {
            return Err(Error::WindowOverflow { side: Side::Left, t: self.t, checkpoint: None });
        }
        if self.values[n - 1] > eps_front {
            return Err(Error::WindowOverflow { side: Side::Right, t: self.t, checkpoint: None });
        }
        let first_dip = (self.lo..n)
            .find(|&i| self.values[i] <= 1.0 - eps_front)
            .expect("last cell is below 1 - eps");
        let right = (0..self.hi.max(1))
            .rev()
            .find(|&i| self.values[i] > eps_front)
            .expect("first cell is above eps");
        Ok(EdgeCells { left: first_dip - 1, right })
    }

    pub fn front_edges(&self, eps_front: f64) -> Result<EdgePair> {
        let c = self.edge_cells(eps_front)?;
        let left = self.cell_x(c.left);
        let right = self.cell_x(c.right);
        Ok(EdgePair { left, right, width: right - left })
    }

    /// The centroid `Xi`, with tails outside the window taken as exact 1 and 0.
    ///
    /// Cells in the flat regions contribute whole units that are counted as
    /// integers; the remaining cells are summed left to right. Shifting the
    /// window therefore leaves the result bit-identical.
    pub fn xi(&self) -> Result<f64> {
        let n = self.values.len();
        if self.values[0] <= 1.0 - DEFAULT_EPS_FRONT {
            return Err(Error::WindowOverflow { side: Side::Left, t: self.t, checkpoint: None });
        }
        if self.values[n - 1] > DEFAULT_EPS_FRONT {
            return Err(Error::WindowOverflow { side: Side::Right, t: self.t, checkpoint: None });
        }
        let lo_abs = self.origin + self.lo as i64;
        let hi_abs = self.origin + self.hi as i64;
        let mut whole: i64 = lo_abs.max(0) - (-hi_abs).max(0);
        let mut frac = 0.0;
        for i in self.lo..self.hi {
            let v = self.values[i];
            let j = self.origin + i as i64;
            if j < 0 {
                if v == 0.0 {
                    whole -= 1;
                } else if v != 1.0 {
                    frac += v - 1.0;
                }
            } else if v == 1.0 {
                whole += 1;
            } else if v != 0.0 {
                frac += v;
            }
        }
        Ok(self.dx * (whole as f64 + frac))
    }

    /// `dx * sum u (1 - u)`.
    pub fn mass_w(&self) -> f64 {
        let mut s = 0.0;
        for &v in &self.values[self.lo..self.hi] {
            s += v * (1.0 - v);
        }
        self.dx * s
    }

    /// Moves the window by `k` cells (positive moves it right), keeping the
    /// absolute position of every retained cell.
    ///
    /// Dropped cells must be within `eps_front` of the flat value they are
    /// assumed to equal; entering cells are 1 on the left and 0 on the right.
    pub fn shift_window(&mut self, k: i64, eps_front: f64) -> Result<()> {
        let n = self.values.len();
        if k == 0 {
            return Ok(());
        }
        if k.unsigned_abs() as usize >= n {
            let side = if k > 0 { Side::Left } else { Side::Right };
            return Err(Error::WindowOverflow { side, t: self.t, checkpoint: None });
        }
        let m = k.unsigned_abs() as usize;
        // One copy and one fill for both directions. Two direction-specific
        // fills miscompile under rustc 1.97.1 at opt-level >= 2 (the 1.0 fill
        // runs off the end of the buffer).
        let (side, dropped, kept, dest, vacated, pad) = if k > 0 {
            (Side::Left, 0..m, m..n, 0, n - m..n, 0.0)
        } else {
            (Side::Right, n - m..n, 0..n - m, m, 0..m, 1.0)
        };
        let lost = |v: f64| if k > 0 { v <= 1.0 - eps_front } else { v > eps_front };
        if self.values[dropped].iter().any(|&v| lost(v)) {
            return Err(Error::WindowOverflow { side, t: self.t, checkpoint: None });
        }
        self.values.copy_within(kept, dest);
        self.values[vacated].fill(pad);
        self.origin += k;
        self.rescan_flat_regions();
        Ok(())
    }

    /// Shifts the window by whole cells so that the absolute position `target`
    /// lands on the center cell. Returns the shift in cells.
    pub fn recenter(&mut self, target: f64, eps_front: f64) -> Result<i64> {
        if !target.is_finite() {
            return Err(Error::Domain(format!("recenter target {target} is not finite")));
        }
        let target_cell = (target / self.dx).round() as i64;
        let k = target_cell - (self.origin + (self.values.len() / 2) as i64);
        self.shift_window(k, eps_front)?;
        Ok(k)
    }

    /// Pads the window with `extra` cells of 1 on the left and of 0 on the right.
    pub fn widen(&mut self, extra: usize) {
        let mut values = vec![1.0; extra];
        values.extend_from_slice(&self.values);
        values.resize(values.len() + extra, 0.0);
        self.values = values;
        self.origin -= extra as i64;
        self.rescan_flat_regions();
    }

    /// Cells strictly between `eps` and `1 - eps`.
    pub fn interior_count(&self, eps_front: f64) -> usize {
        self.values[self.lo..self.hi]
            .iter()
            .filter(|&&v| v > eps_front && v < 1.0 - eps_front)
            .count()
    }

    /// Snapshot rows `x,u`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 4);
        out.push_str("x,u\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.cell_x(i), v));
        }
        out
    }

    /// Parses [`Self::to_csv`] output; positions are snapped to the lattice of `dx`.
    pub fn from_csv(text: &str, dx: f64, t: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,u") {
            return Err(Error::Config("snapshot must start with the header x,u".into()));
        }
        let mut values = Vec::new();
        let mut origin = None;
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (x, u) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("snapshot row {row} is malformed")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("snapshot row {row}: {e}")))
            };
            let (x, u) = (parse(x)?, parse(u)?);
            let j = (x / dx).round() as i64;
            match origin {
                None => origin = Some(j),
                Some(o) if j != o + row as i64 => {
                    return Err(Error::Config(format!("snapshot row {row} breaks the lattice")))
                }
                Some(_) => {}
            }
            values.push(u);
        }
        let origin = origin.ok_or_else(|| Error::Config("snapshot has no rows".into()))?;
        Self::from_values(values, origin, dx, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = DEFAULT_EPS_FRONT;

    #[test]
    fn step_at_zero() {
        let s = FrontState::step(0.0, 0.1, 20.0, 0.0).unwrap();
        let e = s.front_edges(EPS).unwrap();
        assert!(e.left.abs() <= 0.1 + 1e-12 && e.right.abs() <= 0.1 + 1e-12);
        assert!(s.xi().unwrap().abs() <= 0.1);
        assert_eq!(s.xi().unwrap(), 0.0);
        assert_eq!(s.mass_w(), 0.0);
    }

    #[test]
    fn widening_keeps_positions() {
        let mut s = FrontState::step(0.0, 0.1, 20.0, 0.0).unwrap();
        let before = (s.xi().unwrap(), s.front_edges(EPS).unwrap(), s.cell_x(0));
        s.widen(30);
        assert_eq!(s.len(), 260);
        assert_eq!((s.xi().unwrap(), s.front_edges(EPS).unwrap()), (before.0, before.1));
        assert!((s.cell_x(30) - before.2).abs() < 1e-12);
    }

    #[test]
    fn translated_step() {
        let s = FrontState::step(3.5, 0.5, 100.0, 0.0).unwrap();
        let e = s.front_edges(EPS).unwrap();
        assert!((e.left - 3.5).abs() <= 0.5 && (e.right - 3.5).abs() <= 0.5);
        assert!((s.xi().unwrap() - 3.5).abs() <= 0.5);
        assert_eq!(s.cell_x(s.len() / 2), 3.5);
    }

    #[test]
    fn off_lattice_step() {
        let s = FrontState::step(0.3, 0.1, 20.0, 0.0).unwrap();
        let half = s.len() / 2;
        assert!(s.cell_x(half) >= 0.3);
        assert!(s.cell_x(half - 1) < 0.3);
        assert!((s.xi().unwrap() - 0.3).abs() <= 0.1);
    }

    #[test]
    fn window_too_small() {
        assert!(matches!(FrontState::step(0.0, 0.1, 0.5, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn edges_read_off_the_grid() {
        let s = FrontState::from_values(vec![1.0, 1.0, 0.5, 0.0, 0.0], -2, 1.0, 0.0).unwrap();
        let e = s.front_edges(EPS).unwrap();
        assert_eq!((e.left, e.right), (-1.0, 0.0));

        let s = FrontState::from_values(vec![1.0, 0.5, 1.0, 0.5, 0.0], 0, 1.0, 0.0).unwrap();
        let e = s.front_edges(EPS).unwrap();
        assert_eq!((e.left, e.right), (0.0, 3.0));
    }

    #[test]
    fn edges_report_overflow_side() {
        let s = FrontState::from_values(vec![0.5, 0.0, 0.0], 0, 1.0, 0.0).unwrap();
        assert!(matches!(s.front_edges(EPS), Err(Error::WindowOverflow { side: Side::Left, .. })));
        let s = FrontState::from_values(vec![1.0, 1.0, 0.5], 0, 1.0, 0.0).unwrap();
        assert!(matches!(s.front_edges(EPS), Err(Error::WindowOverflow { side: Side::Right, .. })));
        assert!(matches!(s.front_edges(0.7), Err(Error::Domain(_))));
    }

    #[test]
    fn xi_and_mass_by_hand() {
        let s = FrontState::from_values(vec![1.0, 0.5, 0.0], -1, 1.0, 0.0).unwrap();
        assert_eq!(s.xi().unwrap(), 0.5);
        assert_eq!(s.mass_w(), 0.25);

        let s = FrontState::from_values(vec![0.5; 8], 0, 0.25, 0.0).unwrap();
        assert_eq!(s.mass_w(), 0.25 * 8.0 * 0.25);
    }

    #[test]
    fn xi_of_shifted_steps() {
        for c in [-7.0, -0.2, 0.0, 1.5, 12.3] {
            let s = FrontState::step(c, 0.1, 40.0, 0.0).unwrap();
            assert!((s.xi().unwrap() - c).abs() <= 0.1, "c = {c}");
        }
    }

    #[test]
    fn recenter_by_ten_cells_is_a_relabeling() {
        let mut s = FrontState::step(0.0, 0.1, 20.0, 0.0).unwrap();
        let before = s.front_edges(EPS).unwrap();
        s.shift_window(10, EPS).unwrap();
        assert_eq!(s.front_edges(EPS).unwrap(), before);
        s.shift_window(-25, EPS).unwrap();
        assert_eq!(s.front_edges(EPS).unwrap(), before);
    }

    #[test]
    fn recenter_refuses_to_drop_interface() {
        let mut vals = vec![0.5; 200];
        vals[0] = 1.0;
        vals[199] = 0.0;
        let mut s = FrontState::from_values(vals, 0, 0.1, 0.0).unwrap();
        assert!(matches!(s.shift_window(5, EPS), Err(Error::WindowOverflow { side: Side::Left, .. })));
        assert!(matches!(s.shift_window(-5, EPS), Err(Error::WindowOverflow { side: Side::Right, .. })));
        assert!(matches!(s.recenter(1e6, EPS), Err(Error::WindowOverflow { .. })));
    }

    #[test]
    fn recenter_puts_target_in_the_middle() {
        let mut s = FrontState::step(0.0, 0.1, 20.0, 0.0).unwrap();
        let k = s.recenter(3.0, EPS).unwrap();
        assert_eq!(k, 30);
        assert_eq!(s.origin() + (s.len() / 2) as i64, 30);
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let vals: Vec<f64> = (0..150)
            .map(|i| if i < 60 { 1.0 } else if i > 90 { 0.0 } else { 1.0 / (1.0 + (i as f64 - 75.0).exp()) })
            .collect();
        let s = FrontState::from_values(vals, -75, 0.1, 1.25).unwrap();
        let back = FrontState::from_csv(&s.to_csv(), 0.1, 1.25).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn json_round_trip_recomputes_flat_regions() {
        let s = FrontState::from_values(vec![1.0, 1.0, 0.3, 0.0, 0.7, 0.0], 4, 0.5, 2.0).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: FrontState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.flat_regions(), (2, 5));
    }

    fn arb_state() -> impl Strategy<Value = FrontState> {
        (prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 1..60), -300i64..300)
            .prop_map(|(core, start)| {
                let mut v = vec![1.0; 130];
                v.extend(core);
                v.extend(vec![0.0; 130]);
                FrontState::from_values(v, start - 130, 0.1, 0.0).unwrap()
            })
    }

    proptest! {
        #[test]
        fn sandwich_holds(s in arb_state()) {
            let e = s.front_edges(EPS).unwrap();
            let xi = s.xi().unwrap();
            prop_assert!(e.left - s.dx() <= xi + 1e-9);
            prop_assert!(xi <= e.right + s.dx() + 1e-9);
            prop_assert!(e.right >= e.left - s.dx() - 1e-12);
        }

        #[test]
        fn shifting_preserves_observables_bitwise(s in arb_state(), k in -100i64..100) {
            let mut t = s.clone();
            t.shift_window(k, EPS).unwrap();
            prop_assert_eq!(t.front_edges(EPS).unwrap(), s.front_edges(EPS).unwrap());
            prop_assert_eq!(t.xi().unwrap().to_bits(), s.xi().unwrap().to_bits());
            prop_assert_eq!(t.mass_w().to_bits(), s.mass_w().to_bits());
            let (lo, hi) = t.flat_regions();
            prop_assert!(t.values()[..lo].iter().all(|&v| v == 1.0));
            prop_assert!(t.values()[hi..].iter().all(|&v| v == 0.0));
        }

        #[test]
        fn mass_is_nonnegative(s in arb_state()) {
            prop_assert!(s.mass_w() >= 0.0);
        }
    }
}
