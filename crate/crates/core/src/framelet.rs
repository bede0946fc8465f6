//! Decimated filter-bank transforms with circular boundaries.
//!
//! Analysis with filter `h` is `c[k] = Σ_j h[j]·x[(2k + j) mod n]`; synthesis
//! is its exact adjoint. For a tight frame the adjoint is also the inverse.
//!
//! In 2-D the bank is applied separably. Subband `a·(r+1) + b` holds filter
//! `a` along axis 0 and filter `b` along axis 1, so the low subband comes
//! first and the high subbands follow in lexicographic filter order.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::signal::{correlate_down, correlate_up};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BankKind {
    LinearBspline,
    Haar,
    PixelUnshuffle,
}

impl BankKind {
    pub const ALL: [BankKind; 3] = [BankKind::LinearBspline, BankKind::Haar, BankKind::PixelUnshuffle];

    pub fn name(self) -> &'static str {
        match self {
            BankKind::LinearBspline => "linear-bspline",
            BankKind::Haar => "haar",
            BankKind::PixelUnshuffle => "pixel-unshuffle",
        }
    }
}

impl fmt::Display for BankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BankKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown filter bank '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub name: String,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<Vec<f64>>,
    pub downsample: usize,
}

pub fn make_bank(kind: BankKind) -> FilterBank {
    let s2 = std::f64::consts::SQRT_2;
    let (low, high) = match kind {
        // Piecewise-linear framelet, scaled so the three filters satisfy Σ WᵢᵀWᵢ = I
        // under stride-2 decimation.
        BankKind::LinearBspline => (
            vec![s2 / 4.0, s2 / 2.0, s2 / 4.0],
            vec![vec![0.5, 0.0, -0.5], vec![-s2 / 4.0, s2 / 2.0, -s2 / 4.0]],
        ),
        BankKind::Haar => (vec![1.0 / s2, 1.0 / s2], vec![vec![1.0 / s2, -1.0 / s2]]),
        BankKind::PixelUnshuffle => (vec![1.0, 0.0], vec![vec![0.0, 1.0]]),
    };
    FilterBank::custom(kind.name(), low, high).expect("built-in bank")
}

impl FilterBank {
    /// Arbitrary bank; shorter filters are zero-padded to the longest tap count.
    pub fn custom(name: impl Into<String>, lowpass: Vec<f64>, highpass: Vec<Vec<f64>>) -> Result<Self> {
        if highpass.is_empty() {
            return Err(Error::invalid("a filter bank needs at least one high-pass filter"));
        }
        let taps = highpass.iter().map(Vec::len).chain([lowpass.len()]).max().unwrap_or(0);
        if taps == 0 {
            return Err(Error::invalid("empty filter"));
        }
        let pad = |mut h: Vec<f64>| {
            h.resize(taps, 0.0);
            h
        };
        Ok(FilterBank {
            name: name.into(),
            lowpass: pad(lowpass),
            highpass: highpass.into_iter().map(pad).collect(),
            downsample: 2,
        })
    }

    /// Number of high-pass filters.
    pub fn r(&self) -> usize {
        self.highpass.len()
    }

    pub fn taps(&self) -> usize {
        self.lowpass.len()
    }

    /// Subband count after one transform in `dims` dimensions: `(r+1)^dims`.
    pub fn subbands(&self, dims: usize) -> usize {
        (self.r() + 1).pow(dims as u32)
    }

    /// Low-pass first, then the high-pass filters.
    pub fn filters(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.lowpass.as_slice()).chain(self.highpass.iter().map(Vec::as_slice))
    }

    fn filter(&self, i: usize) -> &[f64] {
        if i == 0 {
            &self.lowpass
        } else {
            &self.highpass[i - 1]
        }
    }

    /// Explicit `[n/2, n]` matrix of "correlate with filter `i`, keep every 2nd sample".
    pub fn analysis_matrix(&self, i: usize, n: usize) -> Result<Tensor> {
        check_len(n, 0, self.taps())?;
        let h = self.filter(i);
        let half = n / 2;
        let mut m = vec![0.0; half * n];
        for k in 0..half {
            for (j, &hj) in h.iter().enumerate() {
                m[k * n + (2 * k + j) % n] += hj;
            }
        }
        Tensor::new(vec![half, n], m)
    }

    /// `W_L`, shape `[n/2, n]`.
    pub fn low_matrix(&self, n: usize) -> Result<Tensor> {
        self.analysis_matrix(0, n)
    }

    /// `W_H`, the high-pass matrices stacked in filter order, shape `[r·n/2, n]`.
    pub fn high_matrix(&self, n: usize) -> Result<Tensor> {
        let mut data = Vec::new();
        for i in 1..=self.r() {
            data.extend_from_slice(self.analysis_matrix(i, n)?.data());
        }
        Tensor::new(vec![self.r() * n / 2, n], data)
    }

    /// Full analysis operator `W = [W_L; W_H]`.
    pub fn analysis_operator(&self, n: usize) -> Result<Tensor> {
        let mut data = self.low_matrix(n)?.into_vec();
        data.extend_from_slice(self.high_matrix(n)?.data());
        Tensor::new(vec![(self.r() + 1) * n / 2, n], data)
    }
}

fn check_len(n: usize, axis: usize, taps: usize) -> Result<()> {
    if n % 2 != 0 {
        return Err(Error::Indivisible {
            axis,
            len: n,
            divisor: 2,
        });
    }
    if n < taps {
        return Err(Error::invalid(format!(
            "axis {axis} has length {n}, shorter than the {taps}-tap filters"
        )));
    }
    Ok(())
}

/// `Σᵢ WᵢᵀWᵢ` at size n, assembled from explicit matrices.
fn frame_operator(bank: &FilterBank, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..=bank.r() {
        let w = bank.analysis_matrix(i, n)?;
        let d = w.data();
        for row in 0..n / 2 {
            let r = &d[row * n..(row + 1) * n];
            for (a, &ra) in r.iter().enumerate() {
                if ra == 0.0 {
                    continue;
                }
                for (b, &rb) in r.iter().enumerate() {
                    g[a][b] += ra * rb;
                }
            }
        }
    }
    Ok(g)
}

/// `‖Σᵢ WᵢᵀWᵢ − I‖_max` for the 1-D operator at even size `n ≥ 2·taps`.
pub fn verify_uep(bank: &FilterBank, n: usize) -> Result<f64> {
    check_uep_size(bank, n)?;
    let g = frame_operator(bank, n)?;
    Ok(max_identity_residual(n, |a, b| g[a][b]))
}

/// 2-D analogue on `n × n` images. The separable subband operators are
/// `W_a ⊗ W_b`, so the frame operator is `Σ_{a,b} (W_aᵀW_a) ⊗ (W_bᵀW_b)`,
/// assembled entrywise.
pub fn verify_uep_2d(bank: &FilterBank, n: usize) -> Result<f64> {
    check_uep_size(bank, n)?;
    let per: Vec<Vec<Vec<f64>>> = (0..=bank.r())
        .map(|i| {
            let single = FilterBank {
                name: String::new(),
                lowpass: bank.filter(i).to_vec(),
                highpass: Vec::new(),
                downsample: 2,
            };
            frame_operator(&single, n)
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for xp in 0..n {
            for y in 0..n {
                for yp in 0..n {
                    let mut s = 0.0;
                    for ga in &per {
                        let gax = ga[x][xp];
                        if gax == 0.0 {
                            continue;
                        }
                        for gb in &per {
                            s += gax * gb[y][yp];
                        }
                    }
                    let target = if x == xp && y == yp { 1.0 } else { 0.0 };
                    worst = worst.max((s - target).abs());
                }
            }
        }
    }
    Ok(worst)
}

fn check_uep_size(bank: &FilterBank, n: usize) -> Result<()> {
    if n % 2 != 0 {
        return Err(Error::invalid(format!("verify_uep needs an even size, got {n}")));
    }
    if n < 2 * bank.taps() {
        return Err(Error::invalid(format!(
            "verify_uep needs n ≥ {} for {}-tap filters",
            2 * bank.taps(),
            bank.taps()
        )));
    }
    Ok(())
}

fn max_identity_residual(n: usize, g: impl Fn(usize, usize) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g(a, b) - target).abs());
        }
    }
    worst
}

/// One level of subbands.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub low: Tensor,
    pub high: Vec<Tensor>,
    pub level: usize,
}

impl Coefficients {
    pub fn subbands(&self) -> impl Iterator<Item = &Tensor> {
        std::iter::once(&self.low).chain(self.high.iter())
    }

    /// Shape of each subband.
    pub fn subband_shape(&self) -> &[usize] {
        self.low.shape()
    }

    /// Total coefficient count.
    pub fn len(&self) -> usize {
        self.subbands().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stacks flattened subbands into a `[C, P]` matrix, low first.
    pub fn to_matrix(&self) -> Tensor {
        let p = self.low.len();
        let mut data = Vec::with_capacity(p * (1 + self.high.len()));
        for s in self.subbands() {
            data.extend_from_slice(s.data());
        }
        Tensor::new(vec![1 + self.high.len(), p], data).expect("consistent subbands")
    }

    pub fn from_matrix(m: &Tensor, subband_shape: &[usize], level: usize) -> Result<Self> {
        let (c, p) = match m.shape() {
            [c, p] => (*c, *p),
            s => return Err(Error::invalid(format!("coefficient matrix must be rank 2, got {s:?}"))),
        };
        if c < 2 || subband_shape.iter().product::<usize>() != p {
            return Err(Error::ShapeMismatch {
                op: "Coefficients::from_matrix",
                lhs: m.shape().to_vec(),
                rhs: subband_shape.to_vec(),
            });
        }
        let row = |i: usize| Tensor::new(subband_shape.to_vec(), m.data()[i * p..(i + 1) * p].to_vec());
        Ok(Coefficients {
            low: row(0)?,
            high: (1..c).map(row).collect::<Result<_>>()?,
            level,
        })
    }

    /// Writes one LRTF file per subband plus a `coefficients.txt` sidecar.
    pub fn save(&self, dir: &Path, bank: &FilterBank) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut order = Vec::new();
        for (i, s) in self.subbands().enumerate() {
            let file = format!("subband_{i:02}.lrtf");
            s.save(dir.join(&file))?;
            order.push(file);
        }
        let shape: Vec<String> = self.subband_shape().iter().map(usize::to_string).collect();
        let sidecar = format!(
            "bank = {}\nlevel = {}\nsubband_shape = {}\norder = {}\n",
            bank.name,
            self.level,
            shape.join("x"),
            order.join(",")
        );
        let path = dir.join("coefficients.txt");
        fs::write(&path, sidecar).map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`Coefficients::save`]; returns the bank name too.
    pub fn load(dir: &Path) -> Result<(String, Coefficients)> {
        let path = dir.join("coefficients.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut bank = None;
        let mut level = None;
        let mut order = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("coefficient sidecar", format!("bad line '{line}'")))?;
            match k.trim() {
                "bank" => bank = Some(v.trim().to_string()),
                "level" => {
                    level = Some(
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::format("coefficient sidecar", "bad level"))?,
                    )
                }
                "order" => order = Some(v.trim().split(',').map(str::to_string).collect::<Vec<_>>()),
                "subband_shape" => {}
                other => return Err(Error::format("coefficient sidecar", format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::format("coefficient sidecar", format!("missing '{k}'"));
        let order = order.ok_or_else(|| missing("order"))?;
        if order.len() < 2 {
            return Err(Error::format("coefficient sidecar", "fewer than two subbands"));
        }
        let mut bands = order
            .iter()
            .map(|f| Tensor::load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let low = bands.remove(0);
        if bands.iter().any(|b| b.shape() != low.shape()) {
            return Err(Error::format("coefficient sidecar", "subband shapes differ"));
        }
        Ok((
            bank.ok_or_else(|| missing("bank"))?,
            Coefficients {
                low,
                high: bands,
                level: level.ok_or_else(|| missing("level"))?,
            },
        ))
    }
}

fn check_dims(x: &Tensor, dims: usize) -> Result<()> {
    if dims != 1 && dims != 2 {
        return Err(Error::invalid(format!("dims must be 1 or 2, got {dims}")));
    }
    if x.rank() != dims {
        return Err(Error::invalid(format!(
            "{dims}-D transform of a rank-{} tensor",
            x.rank()
        )));
    }
    Ok(())
}

/// One analysis level.
pub fn analyze(x: &Tensor, bank: &FilterBank, dims: usize) -> Result<Coefficients> {
    analyze_at(x, bank, dims, 1)
}

fn analyze_at(x: &Tensor, bank: &FilterBank, dims: usize, level: usize) -> Result<Coefficients> {
    check_dims(x, dims)?;
    for (axis, &n) in x.shape().iter().enumerate() {
        check_len(n, axis, bank.taps())?;
    }
    let mut bands = Vec::with_capacity(bank.subbands(dims));
    if dims == 1 {
        for h in bank.filters() {
            let (shape, data) = correlate_down(x.data(), x.shape(), 0, h)?;
            bands.push(Tensor::new(shape, data)?);
        }
    } else {
        for ha in bank.filters() {
            let (s0, d0) = correlate_down(x.data(), x.shape(), 0, ha)?;
            for hb in bank.filters() {
                let (s1, d1) = correlate_down(&d0, &s0, 1, hb)?;
                bands.push(Tensor::new(s1, d1)?);
            }
        }
    }
    let low = bands.remove(0);
    Ok(Coefficients {
        low,
        high: bands,
        level,
    })
}

/// Adjoint of [`analyze`]; exact inverse for a tight frame.
pub fn synthesize(c: &Coefficients, bank: &FilterBank, dims: usize) -> Result<Tensor> {
    check_dims(&c.low, dims)?;
    if c.high.len() + 1 != bank.subbands(dims) {
        return Err(Error::invalid(format!(
            "{} subbands supplied, bank '{}' needs {} in {dims}-D",
            c.high.len() + 1,
            bank.name,
            bank.subbands(dims)
        )));
    }
    if let Some(bad) = c.high.iter().find(|h| h.shape() != c.low.shape()) {
        return Err(Error::ShapeMismatch {
            op: "synthesize",
            lhs: c.low.shape().to_vec(),
            rhs: bad.shape().to_vec(),
        });
    }
    let out_shape: Vec<usize> = c.low.shape().iter().map(|d| 2 * d).collect();
    let mut out = vec![0.0; out_shape.iter().product()];
    let filters: Vec<&[f64]> = bank.filters().collect();
    for (idx, band) in c.subbands().enumerate() {
        let contrib = if dims == 1 {
            correlate_up(band.data(), band.shape(), 0, filters[idx])?.1
        } else {
            let (a, b) = (idx / filters.len(), idx % filters.len());
            let (s1, d1) = correlate_up(band.data(), band.shape(), 1, filters[b])?;
            correlate_up(&d1, &s1, 0, filters[a])?.1
        };
        for (o, v) in out.iter_mut().zip(contrib) {
            *o += v;
        }
    }
    Tensor::new(out_shape, out)
}

fn check_levels(shape: &[usize], levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("at least one level is required"));
    }
    let divisor = 1usize << levels;
    for (axis, &len) in shape.iter().enumerate() {
        if len % divisor != 0 {
            return Err(Error::Indivisible { axis, len, divisor });
        }
    }
    Ok(())
}

/// Re-analyzes the low subband `levels` times; level 1 first.
pub fn multi_level_analyze(x: &Tensor, bank: &FilterBank, dims: usize, levels: usize) -> Result<Vec<Coefficients>> {
    check_dims(x, dims)?;
    check_levels(x.shape(), levels)?;
    let mut out: Vec<Coefficients> = Vec::with_capacity(levels);
    let mut cur = x.clone();
    for level in 1..=levels {
        let c = analyze_at(&cur, bank, dims, level)?;
        cur = c.low.clone();
        out.push(c);
    }
    Ok(out)
}

/// Inverse of [`multi_level_analyze`]: only the deepest low subband is read.
pub fn multi_level_synthesize(levels: &[Coefficients], bank: &FilterBank, dims: usize) -> Result<Tensor> {
    let last = levels.last().ok_or_else(|| Error::invalid("no levels"))?;
    let mut low = last.low.clone();
    for c in levels.iter().rev() {
        let step = Coefficients {
            low,
            high: c.high.clone(),
            level: c.level,
        };
        low = synthesize(&step, bank, dims)?;
    }
    Ok(low)
}

/// The retained-subspace projection `W_Lᵀ W_L` iterated over `levels`.
pub fn low_pass_projection(x: &Tensor, bank: &FilterBank, dims: usize, levels: usize) -> Result<Tensor> {
    let mut coeffs = multi_level_analyze(x, bank, dims, levels)?;
    for c in &mut coeffs {
        for h in &mut c.high {
            *h = Tensor::zeros(h.shape());
        }
    }
    multi_level_synthesize(&coeffs, bank, dims)
}

fn shared_filters(bank: &FilterBank) -> Vec<Arc<Vec<f64>>> {
    bank.filters().map(|h| Arc::new(h.to_vec())).collect()
}

/// Tape version of [`analyze`]; returns the `[C, P]` coefficient matrix.
pub fn analyze_var(tape: &Tape, x: Var, bank: &FilterBank, dims: usize) -> Result<Var> {
    let shape = tape.shape(x);
    check_dims(&Tensor::zeros(&shape), dims)?;
    for (axis, &n) in shape.iter().enumerate() {
        check_len(n, axis, bank.taps())?;
    }
    let filters = shared_filters(bank);
    let p: usize = shape.iter().map(|d| d / 2).product();
    let mut rows = Vec::with_capacity(bank.subbands(dims));
    if dims == 1 {
        for h in &filters {
            let b = tape.conv_down(x, 0, Arc::clone(h))?;
            rows.push(tape.reshape(b, &[1, p])?);
        }
    } else {
        for ha in &filters {
            let a = tape.conv_down(x, 0, Arc::clone(ha))?;
            for hb in &filters {
                let b = tape.conv_down(a, 1, Arc::clone(hb))?;
                rows.push(tape.reshape(b, &[1, p])?);
            }
        }
    }
    tape.concat(&rows, 0)
}

/// Tape version of [`synthesize`] on a `[C, P]` matrix with subbands of `subband_shape`.
pub fn synthesize_var(tape: &Tape, c: Var, bank: &FilterBank, subband_shape: &[usize]) -> Result<Var> {
    let dims = subband_shape.len();
    let shape = tape.shape(c);
    let expected = [bank.subbands(dims), subband_shape.iter().product()];
    if shape != expected {
        return Err(Error::ShapeMismatch {
            op: "synthesize_var",
            lhs: shape,
            rhs: expected.to_vec(),
        });
    }
    let filters = shared_filters(bank);
    let mut acc: Option<Var> = None;
    for idx in 0..expected[0] {
        let row = tape.slice(c, 0, idx..idx + 1)?;
        let band = tape.reshape(row, subband_shape)?;
        let up = if dims == 1 {
            tape.conv_up(band, 0, Arc::clone(&filters[idx]))?
        } else {
            let (a, b) = (idx / filters.len(), idx % filters.len());
            let t = tape.conv_up(band, 1, Arc::clone(&filters[b]))?;
            tape.conv_up(t, 0, Arc::clone(&filters[a]))?
        };
        acc = Some(match acc {
            None => up,
            Some(s) => tape.add(s, up)?,
        });
    }
    Ok(acc.expect("at least two subbands"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1(n: usize) -> Tensor {
        Tensor::from_fn(&[n], |i| if i == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn built_in_banks_are_tight() {
        assert!(verify_uep(&make_bank(BankKind::LinearBspline), 16).unwrap() < 1e-12);
        assert!(verify_uep(&make_bank(BankKind::Haar), 8).unwrap() < 1e-14);
        assert!(verify_uep(&make_bank(BankKind::PixelUnshuffle), 8).unwrap() < 1e-14);
    }

    #[test]
    fn scaled_lowpass_is_caught() {
        let b = make_bank(BankKind::LinearBspline);
        let bad = FilterBank::custom("bad", b.lowpass.iter().map(|v| 2.0 * v).collect(), b.highpass.clone()).unwrap();
        assert!(verify_uep(&bad, 16).unwrap() > 0.1);
    }

    #[test]
    fn uep_size_errors() {
        let b = make_bank(BankKind::Haar);
        assert!(verify_uep(&b, 7).is_err());
        assert!(verify_uep(&b, 2).is_err());
    }

    #[test]
    fn haar_impulse() {
        let c = analyze(&e1(8), &make_bank(BankKind::Haar), 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = Tensor::from_vec(vec![r, 0.0, 0.0, 0.0]);
        assert!(c.low.max_abs_diff(&expect).unwrap() < 1e-15);
        assert!(c.high[0].max_abs_diff(&expect).unwrap() < 1e-15);
        let back = synthesize(&c, &make_bank(BankKind::Haar), 1).unwrap();
        assert!(back.max_abs_diff(&e1(8)).unwrap() < 1e-15);
    }

    #[test]
    fn pixel_unshuffle_is_a_permutation() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let c = analyze(&x, &make_bank(BankKind::PixelUnshuffle), 1).unwrap();
        assert_eq!(c.low.data(), &[1.0, 3.0]);
        assert_eq!(c.high[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_have_no_high_content() {
        for kind in [BankKind::LinearBspline, BankKind::Haar] {
            let c = analyze(&Tensor::full(&[8, 8], 0.7), &make_bank(kind), 2).unwrap();
            for h in &c.high {
                assert!(h.max_abs() < 1e-15, "{kind}");
            }
        }
    }

    #[test]
    fn odd_axis_error_names_axis() {
        let err = analyze(&Tensor::zeros(&[8, 7]), &make_bank(BankKind::Haar), 2).unwrap_err();
        assert!(matches!(err, Error::Indivisible { axis: 1, len: 7, .. }));
    }

    #[test]
    fn bspline_redundancy_and_level_sizes() {
        let b = make_bank(BankKind::LinearBspline);
        let x = Tensor::from_fn(&[16], |i| (i as f64).sin());
        let c = analyze(&x, &b, 1).unwrap();
        assert_eq!(c.len(), 24);
        let levels = multi_level_analyze(&x, &b, 1, 2).unwrap();
        assert_eq!(levels[1].low.len(), 4);
        assert_eq!(levels[0], c);
        assert!(multi_level_analyze(&Tensor::zeros(&[12]), &b, 1, 3).is_err());
    }

    #[test]
    fn haar_low_only_synthesis_is_projection() {
        let b = make_bank(BankKind::Haar);
        let x = Tensor::from_vec(vec![1.0, 3.0, -2.0, 0.0]);
        let p = low_pass_projection(&x, &b, 1, 1).unwrap();
        let wl = b.low_matrix(4).unwrap();
        let expected = wl.transpose().unwrap().matmul(&wl.matmul(&x).unwrap()).unwrap();
        assert!(p.max_abs_diff(&expected).unwrap() < 1e-15);
        let pairs = Tensor::from_vec(vec![2.0, 2.0, -1.0, -1.0]);
        assert!(p.max_abs_diff(&pairs).unwrap() < 1e-15);
    }

    #[test]
    fn explicit_matrix_matches_fast_path() {
        let b = make_bank(BankKind::LinearBspline);
        let x = Tensor::from_fn(&[16], |i| ((i * 7) % 5) as f64 - 2.0);
        let c = analyze(&x, &b, 1).unwrap();
        let wx = b.analysis_operator(16).unwrap().matmul(&x).unwrap();
        assert!(wx.max_abs_diff(&c.to_matrix().reshape(&[24]).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn tape_transform_matches_plain() {
        let b = make_bank(BankKind::LinearBspline);
        let x = Tensor::from_fn(&[8, 4], |i| (i as f64 * 0.3).cos());
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let cv = analyze_var(&tape, xv, &b, 2).unwrap();
        let plain = analyze(&x, &b, 2).unwrap();
        assert_eq!(tape.value(cv), plain.to_matrix());
        let back = synthesize_var(&tape, cv, &b, &[4, 2]).unwrap();
        assert!(tape.value(back).max_abs_diff(&x).unwrap() < 1e-14);
    }

    #[test]
    fn coefficients_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let b = make_bank(BankKind::Haar);
        let c = analyze(&Tensor::from_fn(&[4, 4], |i| i as f64), &b, 2).unwrap();
        c.save(dir.path(), &b).unwrap();
        let (name, back) = Coefficients::load(dir.path()).unwrap();
        assert_eq!(name, "haar");
        assert_eq!(back, c);
    }
}
