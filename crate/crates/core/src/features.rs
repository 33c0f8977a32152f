//! Basis-function families.
//!
//! A [`FeatureMap`] turns a state (a discrete index or a point in a box) into a
//! dense vector of length [`FeatureMap::dim`]. The discrete families used on the
//! chain and star problems are unit-norm per state; the continuous families
//! (RBF grids and the Fourier basis) are evaluated raw.

use alloc::{boxed::Box, vec, vec::Vec};
use core::f64::consts::PI;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("basis needs at least {min} states, got {got}")]
    TooFewStates { min: usize, got: usize },
    #[error("dependent features need an odd number of states, got {0}")]
    EvenStateCount(usize),
    #[error("no grid sizes given")]
    EmptyGrid,
    #[error("grid size must be positive")]
    ZeroGridSize,
    #[error("interval {index} is degenerate: [{lo}, {hi}]")]
    DegenerateBounds { index: usize, lo: f64, hi: f64 },
    #[error("expected {expected} state dimensions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state index {index} out of range for {n_states} states")]
    StateOutOfRange { index: usize, n_states: usize },
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("basis expects {expected} states")]
    WrongStateKind { expected: &'static str },
    #[error("state-action basis evaluated without an action")]
    MissingAction,
    #[error("basis would have more than {max} features")]
    TooManyFeatures { max: usize },
    #[error("feature table is empty")]
    EmptyTable,
    #[error("feature table contains a non-finite entry")]
    NonFiniteTable,
}

/// Largest basis we are willing to materialise.
pub const MAX_FEATURES: usize = 1 << 24;

/// Closed interval `[lo, hi]` bounding one state coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Maps `v` into `[0, 1]`, clamping values outside the interval.
    pub fn unit(&self, v: f64) -> f64 {
        ((v - self.lo) / self.width()).clamp(0.0, 1.0)
    }

    fn check(&self, index: usize) -> Result<(), FeatureError> {
        let ok = self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo;
        if ok {
            Ok(())
        } else {
            Err(FeatureError::DegenerateBounds { index, lo: self.lo, hi: self.hi })
        }
    }
}

/// A state handed to a feature map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum State<'a> {
    Index(usize),
    Point(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Tabular,
    Inverted,
    Dependent,
    Table,
    RbfGrid,
    Fourier,
    ActionStacked,
}

/// Gaussian bumps on a stack of square grids over a 2-D box.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfGrid {
    bounds: [Interval; 2],
    grid_sizes: Vec<usize>,
    include_constant: bool,
}

impl RbfGrid {
    pub fn bounds(&self) -> &[Interval; 2] {
        &self.bounds
    }

    pub fn grid_sizes(&self) -> &[usize] {
        &self.grid_sizes
    }

    pub fn include_constant(&self) -> bool {
        self.include_constant
    }

    /// Feature index range covered by each grid, in construction order.
    pub fn blocks(&self) -> Vec<(usize, Range<usize>)> {
        let mut start = 0;
        self.grid_sizes
            .iter()
            .map(|&g| {
                let r = start..start + g * g;
                start = r.end;
                (g, r)
            })
            .collect()
    }

    fn dim(&self) -> usize {
        self.grid_sizes.iter().map(|g| g * g).sum::<usize>() + usize::from(self.include_constant)
    }

    // width per dimension: spacing of the grid, or the full interval for a 1x1 grid
    fn spacing(iv: &Interval, g: usize) -> f64 {
        if g > 1 {
            iv.width() / (g - 1) as f64
        } else {
            iv.width()
        }
    }

    fn center(iv: &Interval, g: usize, i: usize) -> f64 {
        if g > 1 {
            iv.lo + i as f64 * iv.width() / (g - 1) as f64
        } else {
            iv.lo + 0.5 * iv.width()
        }
    }

    fn eval_into(&self, s: &[f64], out: &mut [f64]) {
        let [bx, by] = &self.bounds;
        let mut k = 0;
        for &g in &self.grid_sizes {
            let (sx, sy) = (Self::spacing(bx, g), Self::spacing(by, g));
            for i in 0..g {
                let dx = (s[0] - Self::center(bx, g, i)) / sx;
                for j in 0..g {
                    let dy = (s[1] - Self::center(by, g, j)) / sy;
                    out[k] = libm::exp(-0.5 * (dx * dx + dy * dy));
                    k += 1;
                }
            }
        }
        if self.include_constant {
            out[k] = 1.0;
        }
    }
}

/// Full tensor-product Fourier cosine basis of a given order.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    bounds: Vec<Interval>,
    order: usize,
    // row-major (n_features x state_dim) integer coefficients
    coefficients: Vec<u32>,
}

impl FourierBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn state_dim(&self) -> usize {
        self.bounds.len()
    }

    /// Coefficient vector of feature `i`.
    pub fn coefficients(&self, i: usize) -> &[u32] {
        let k = self.state_dim();
        &self.coefficients[i * k..(i + 1) * k]
    }

    fn eval_into(&self, s: &[f64], out: &mut [f64]) {
        let k = self.state_dim();
        let unit: Vec<f64> = self.bounds.iter().zip(s).map(|(iv, &v)| iv.unit(v)).collect();
        for (o, c) in out.iter_mut().zip(self.coefficients.chunks_exact(k)) {
            let dot: f64 = c.iter().zip(&unit).map(|(&ci, &u)| ci as f64 * u).sum();
            *o = libm::cos(PI * dot);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Tabular { n_states: usize },
    Inverted { n_states: usize },
    Dependent { n_states: usize },
    /// Explicit per-state rows, one row per discrete state.
    Table { rows: DMatrix<f64> },
    RbfGrid(RbfGrid),
    Fourier(FourierBasis),
    ActionStacked { base: Box<FeatureMap>, n_actions: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    basis: Basis,
}

impl FeatureMap {
    /// One-hot features.
    pub fn tabular(n_states: usize) -> Result<Self, FeatureError> {
        if n_states < 1 {
            return Err(FeatureError::TooFewStates { min: 1, got: n_states });
        }
        Ok(Self { dim: n_states, basis: Basis::Tabular { n_states } })
    }

    /// Complement of one-hot, normalised: zero at the state, `1/sqrt(n-1)` elsewhere.
    pub fn inverted(n_states: usize) -> Result<Self, FeatureError> {
        if n_states < 2 {
            return Err(FeatureError::TooFewStates { min: 2, got: n_states });
        }
        Ok(Self { dim: n_states, basis: Basis::Inverted { n_states } })
    }

    /// Overlapping ramp features with `(n+1)/2` columns for an odd number of states.
    ///
    /// State `s` switches on columns `max(0, s-k+1) ..= min(s, k-1)` where
    /// `k = (n+1)/2`, and the row is scaled to unit length. For five states the
    /// rows are `(1,0,0), (1,1,0), (1,1,1), (0,1,1), (0,0,1)` before scaling.
    pub fn dependent(n_states: usize) -> Result<Self, FeatureError> {
        if n_states < 3 {
            return Err(FeatureError::TooFewStates { min: 3, got: n_states });
        }
        if n_states.is_multiple_of(2) {
            return Err(FeatureError::EvenStateCount(n_states));
        }
        Ok(Self { dim: n_states.div_ceil(2), basis: Basis::Dependent { n_states } })
    }

    /// Features given explicitly, one row per discrete state.
    pub fn from_rows(rows: DMatrix<f64>) -> Result<Self, FeatureError> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(FeatureError::EmptyTable);
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteTable);
        }
        Ok(Self { dim: rows.ncols(), basis: Basis::Table { rows } })
    }

    /// Stacked square RBF grids over a 2-D box, optionally followed by a constant feature.
    pub fn rbf_grid(
        bounds: &[Interval],
        grid_sizes: &[usize],
        include_constant: bool,
    ) -> Result<Self, FeatureError> {
        if bounds.len() != 2 {
            return Err(FeatureError::DimensionMismatch { expected: 2, got: bounds.len() });
        }
        for (i, iv) in bounds.iter().enumerate() {
            iv.check(i)?;
        }
        if grid_sizes.is_empty() {
            return Err(FeatureError::EmptyGrid);
        }
        if grid_sizes.contains(&0) {
            return Err(FeatureError::ZeroGridSize);
        }
        let grid = RbfGrid {
            bounds: [bounds[0], bounds[1]],
            grid_sizes: grid_sizes.to_vec(),
            include_constant,
        };
        let dim = grid.dim();
        if dim > MAX_FEATURES {
            return Err(FeatureError::TooManyFeatures { max: MAX_FEATURES });
        }
        Ok(Self { dim, basis: Basis::RbfGrid(grid) })
    }

    /// Fourier cosine basis `cos(pi c . s~)` for every `c` in `{0..=order}^state_dim`.
    ///
    /// `s~` is the state rescaled into the unit box; coordinates outside `bounds`
    /// are clamped to the boundary. Coefficient vectors are enumerated in
    /// lexicographic order with the last coordinate varying fastest.
    pub fn fourier(
        state_dim: usize,
        order: usize,
        bounds: &[Interval],
    ) -> Result<Self, FeatureError> {
        if state_dim == 0 {
            return Err(FeatureError::DimensionMismatch { expected: 1, got: 0 });
        }
        if bounds.len() != state_dim {
            return Err(FeatureError::DimensionMismatch { expected: state_dim, got: bounds.len() });
        }
        for (i, iv) in bounds.iter().enumerate() {
            iv.check(i)?;
        }
        let base = order + 1;
        let dim = u32::try_from(state_dim)
            .ok()
            .and_then(|k| base.checked_pow(k))
            .filter(|&d| d <= MAX_FEATURES)
            .ok_or(FeatureError::TooManyFeatures { max: MAX_FEATURES })?;

        let mut coefficients = vec![0u32; dim * state_dim];
        for (i, row) in coefficients.chunks_exact_mut(state_dim).enumerate() {
            let mut rest = i;
            for slot in row.iter_mut().rev() {
                *slot = (rest % base) as u32;
                rest /= base;
            }
        }
        let fourier = FourierBasis { bounds: bounds.to_vec(), order, coefficients };
        Ok(Self { dim, basis: Basis::Fourier(fourier) })
    }

    /// State-action features: `phi(s)` placed in block `a` of `n_actions` blocks.
    pub fn stack_actions(base: FeatureMap, n_actions: usize) -> Result<Self, FeatureError> {
        if n_actions == 0 {
            return Err(FeatureError::ActionOutOfRange { action: 0, n_actions });
        }
        let dim = base
            .dim
            .checked_mul(n_actions)
            .filter(|&d| d <= MAX_FEATURES)
            .ok_or(FeatureError::TooManyFeatures { max: MAX_FEATURES })?;
        Ok(Self { dim, basis: Basis::ActionStacked { base: Box::new(base), n_actions } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn kind(&self) -> FeatureKind {
        match self.basis {
            Basis::Tabular { .. } => FeatureKind::Tabular,
            Basis::Inverted { .. } => FeatureKind::Inverted,
            Basis::Dependent { .. } => FeatureKind::Dependent,
            Basis::Table { .. } => FeatureKind::Table,
            Basis::RbfGrid(_) => FeatureKind::RbfGrid,
            Basis::Fourier(_) => FeatureKind::Fourier,
            Basis::ActionStacked { .. } => FeatureKind::ActionStacked,
        }
    }

    /// Number of discrete states the basis is defined on, if it is a discrete basis.
    pub fn n_states(&self) -> Option<usize> {
        match &self.basis {
            Basis::Tabular { n_states } | Basis::Inverted { n_states } | Basis::Dependent { n_states } => {
                Some(*n_states)
            }
            Basis::Table { rows } => Some(rows.nrows()),
            Basis::ActionStacked { base, .. } => base.n_states(),
            Basis::RbfGrid(_) | Basis::Fourier(_) => None,
        }
    }

    pub fn n_actions(&self) -> Option<usize> {
        match &self.basis {
            Basis::ActionStacked { n_actions, .. } => Some(*n_actions),
            _ => None,
        }
    }

    /// Writes `phi(state)` into `out`, which must have length [`Self::dim`].
    pub fn eval_into(&self, state: State<'_>, out: &mut [f64]) -> Result<(), FeatureError> {
        if out.len() != self.dim {
            return Err(FeatureError::DimensionMismatch { expected: self.dim, got: out.len() });
        }
        match (&self.basis, state) {
            (Basis::Tabular { n_states }, State::Index(s)) => {
                check_index(s, *n_states)?;
                out.fill(0.0);
                out[s] = 1.0;
            }
            (Basis::Inverted { n_states }, State::Index(s)) => {
                check_index(s, *n_states)?;
                out.fill(1.0 / libm::sqrt((*n_states - 1) as f64));
                out[s] = 0.0;
            }
            (Basis::Dependent { n_states }, State::Index(s)) => {
                check_index(s, *n_states)?;
                let k = self.dim;
                let lo = (s + 1).saturating_sub(k);
                let hi = s.min(k - 1);
                let v = 1.0 / libm::sqrt((hi - lo + 1) as f64);
                out.fill(0.0);
                out[lo..=hi].fill(v);
            }
            (Basis::Table { rows }, State::Index(s)) => {
                check_index(s, rows.nrows())?;
                for (o, v) in out.iter_mut().zip(rows.row(s).iter()) {
                    *o = *v;
                }
            }
            (Basis::RbfGrid(grid), State::Point(p)) => {
                check_point(p, 2)?;
                grid.eval_into(p, out);
            }
            (Basis::Fourier(f), State::Point(p)) => {
                check_point(p, f.state_dim())?;
                f.eval_into(p, out);
            }
            (Basis::ActionStacked { .. }, _) => return Err(FeatureError::MissingAction),
            (Basis::RbfGrid(_) | Basis::Fourier(_), State::Index(_)) => {
                return Err(FeatureError::WrongStateKind { expected: "continuous" })
            }
            (_, State::Point(_)) => return Err(FeatureError::WrongStateKind { expected: "discrete" }),
        }
        Ok(())
    }

    pub fn eval(&self, state: State<'_>) -> Result<DVector<f64>, FeatureError> {
        let mut out = DVector::zeros(self.dim);
        self.eval_into(state, out.as_mut_slice())?;
        Ok(out)
    }

    /// Evaluates a state-action basis. For any other basis `action` must be 0
    /// and the plain state features are returned.
    pub fn eval_action(&self, state: State<'_>, action: usize) -> Result<DVector<f64>, FeatureError> {
        match &self.basis {
            Basis::ActionStacked { base, n_actions } => {
                if action >= *n_actions {
                    return Err(FeatureError::ActionOutOfRange { action, n_actions: *n_actions });
                }
                let mut out = DVector::zeros(self.dim);
                let block = base.dim * action..base.dim * (action + 1);
                base.eval_into(state, &mut out.as_mut_slice()[block])?;
                Ok(out)
            }
            _ if action == 0 => self.eval(state),
            _ => Err(FeatureError::ActionOutOfRange { action, n_actions: 1 }),
        }
    }

    /// Rows `phi(0), ..., phi(n-1)` of a discrete basis as an `n x d` matrix.
    pub fn matrix(&self) -> Result<DMatrix<f64>, FeatureError> {
        let n = self
            .n_states()
            .filter(|_| self.kind() != FeatureKind::ActionStacked)
            .ok_or(FeatureError::WrongStateKind { expected: "discrete" })?;
        let mut m = DMatrix::zeros(n, self.dim);
        let mut row = vec![0.0; self.dim];
        for s in 0..n {
            self.eval_into(State::Index(s), &mut row)?;
            for (j, v) in row.iter().enumerate() {
                m[(s, j)] = *v;
            }
        }
        Ok(m)
    }
}

fn check_index(s: usize, n_states: usize) -> Result<(), FeatureError> {
    if s < n_states {
        Ok(())
    } else {
        Err(FeatureError::StateOutOfRange { index: s, n_states })
    }
}

fn check_point(p: &[f64], dim: usize) -> Result<(), FeatureError> {
    if p.len() == dim {
        Ok(())
    } else {
        Err(FeatureError::DimensionMismatch { expected: dim, got: p.len() })
    }
}
