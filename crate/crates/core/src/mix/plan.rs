use std::fmt::Write as _;

use super::hungarian::max_weight_assignment;
use super::saliency::SaliencyMap;
use crate::data::ScribbleLabel;
use crate::error::{Error, Result};
use crate::tensor::{MixField, Real, Tensor};

/// Search settings for [`optimize_mix_plan`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanConfig {
    pub block_size: usize,
    /// Max block displacement (Chebyshev distance, in blocks) of a transport.
    pub window_radius: usize,
    pub n_iter: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            block_size: 8,
            window_radius: 1,
            n_iter: 4,
        }
    }
}

/// Block-structured two-source mix: output block `i` copies source block
/// `pi1[i]` of the first input when `z[i] == 0`, else source block `pi2[i]`
/// of the second input.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub block_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub z: Vec<u8>,
    pub pi1: Vec<usize>,
    pub pi2: Vec<usize>,
    /// Mixed saliency the plan achieves.
    pub objective: f64,
}

impl MixPlan {
    /// `z = 0` everywhere with identity transports.
    pub fn identity(height: usize, width: usize, block_size: usize) -> Result<Self> {
        let (gh, gw) = grid(height, width, block_size)?;
        let n = gh * gw;
        Ok(MixPlan {
            block_size,
            grid_h: gh,
            grid_w: gw,
            z: vec![0; n],
            pi1: (0..n).collect(),
            pi2: (0..n).collect(),
            objective: 0.0,
        })
    }

    pub fn blocks(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn height(&self) -> usize {
        self.grid_h * self.block_size
    }

    pub fn width(&self) -> usize {
        self.grid_w * self.block_size
    }

    /// Checks that `z` is binary and both transports are permutations.
    pub fn validate(&self) -> Result<()> {
        let n = self.blocks();
        if self.block_size == 0 || self.z.len() != n || self.pi1.len() != n || self.pi2.len() != n {
            return Err(Error::Invalid(format!(
                "plan sizes: {} z, {} pi1, {} pi2 for {n} blocks",
                self.z.len(),
                self.pi1.len(),
                self.pi2.len()
            )));
        }
        if self.z.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("plan z must be 0 or 1".into()));
        }
        for (name, pi) in [("pi1", &self.pi1), ("pi2", &self.pi2)] {
            let mut seen = vec![false; n];
            for &j in pi.iter() {
                if j >= n || std::mem::replace(&mut seen[j], true) {
                    return Err(Error::Invalid(format!(
                        "{name} is not a permutation of 0..{n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Output pixel -> (source pixel in input 1, source pixel in input 2).
    fn sources(&self, p: usize) -> (usize, usize, bool) {
        let (w, b) = (self.width(), self.block_size);
        let (y, x) = (p / w, p % w);
        let i = (y / b) * self.grid_w + x / b;
        let (oy, ox) = (y % b, x % b);
        let at = |blk: usize| ((blk / self.grid_w) * b + oy) * w + (blk % self.grid_w) * b + ox;
        (at(self.pi1[i]), at(self.pi2[i]), self.z[i] == 1)
    }

    /// The plan as a per-pixel selection field.
    pub fn field(&self) -> MixField {
        let hw = self.height() * self.width();
        let mut f = MixField {
            height: self.height(),
            width: self.width(),
            src_a: Vec::with_capacity(hw),
            weight_a: Vec::with_capacity(hw),
            src_b: Vec::with_capacity(hw),
            weight_b: Vec::with_capacity(hw),
        };
        for p in 0..hw {
            let (a, b, second) = self.sources(p);
            f.src_a.push(a as u32);
            f.src_b.push(b as u32);
            f.weight_a.push(if second { 0.0 } else { 1.0 });
            f.weight_b.push(if second { 1.0 } else { 0.0 });
        }
        f
    }

    /// Mixed saliency recomputed pixel by pixel.
    pub fn recompute_objective(&self, s1: &SaliencyMap, s2: &SaliencyMap) -> Result<f64> {
        self.check_extent(s1.height(), s1.width())?;
        self.check_extent(s2.height(), s2.width())?;
        let (a, b) = (s1.values().data(), s2.values().data());
        Ok((0..self.height() * self.width())
            .map(|p| {
                let (i1, i2, second) = self.sources(p);
                if second {
                    b[i2] as f64
                } else {
                    a[i1] as f64
                }
            })
            .sum())
    }

    fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height(), self.width()) {
            return Err(Error::shape(
                "mix plan",
                format!(
                    "plan covers {}x{}, input is {h}x{w}",
                    self.height(),
                    self.width()
                ),
            ));
        }
        Ok(())
    }

    /// Applies the plan to two `[C,H,W]` tensors.
    pub fn apply<T: Real>(&self, a1: &Tensor<T>, a2: &Tensor<T>) -> Result<Tensor<T>> {
        self.validate()?;
        self.field().apply(a1, a2)
    }

    /// Applies the plan to two scribble maps; sentinels move with their block.
    pub fn apply_labels(&self, y1: &ScribbleLabel, y2: &ScribbleLabel) -> Result<ScribbleLabel> {
        self.validate()?;
        if y1.classes() != y2.classes() {
            return Err(Error::shape(
                "mix",
                format!("K={} vs K={}", y1.classes(), y2.classes()),
            ));
        }
        self.check_extent(y1.height(), y1.width())?;
        self.check_extent(y2.height(), y2.width())?;
        let data = (0..self.height() * self.width())
            .map(|p| {
                let (i1, i2, second) = self.sources(p);
                if second {
                    y2.data()[i2]
                } else {
                    y1.data()[i1]
                }
            })
            .collect();
        ScribbleLabel::new(y1.classes(), self.height(), self.width(), data)
    }

    /// Text form: a header line, the `z` grid, then the two transports.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "block_size {}", self.block_size);
        let _ = writeln!(s, "grid {} {}", self.grid_h, self.grid_w);
        let _ = writeln!(s, "objective {:.9e}", self.objective);
        s.push_str("z\n");
        for r in 0..self.grid_h {
            let row: Vec<String> = (0..self.grid_w)
                .map(|c| self.z[r * self.grid_w + c].to_string())
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for (name, pi) in [("pi1", &self.pi1), ("pi2", &self.pi2)] {
            let v: Vec<String> = pi.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{name} {}", v.join(" "));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parse(format!("mix plan: {what}"));
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected {key}, got {line:?}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("bad integer {s:?}")))
        };
        let block_size = num(field("block_size")?
            .first()
            .ok_or_else(|| bad("block_size"))?)?;
        let g = field("grid")?;
        if g.len() != 2 {
            return Err(bad("grid needs two numbers"));
        }
        let (grid_h, grid_w) = (num(&g[0])?, num(&g[1])?);
        let objective = field("objective")?
            .first()
            .ok_or_else(|| bad("objective"))?
            .parse::<f64>()
            .map_err(|_| bad("objective"))?;
        field("z")?;
        let mut z = Vec::new();
        for _ in 0..grid_h {
            let line = lines.next().ok_or_else(|| bad("z rows"))?;
            for t in line.split_whitespace() {
                z.push(num(t)? as u8);
            }
        }
        let mut rest = |key: &str| -> Result<Vec<usize>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected {key}")));
            }
            parts.map(num).collect()
        };
        let pi1 = rest("pi1")?;
        let pi2 = rest("pi2")?;
        let plan = MixPlan {
            block_size,
            grid_h,
            grid_w,
            z,
            pi1,
            pi2,
            objective,
        };
        plan.validate()?;
        Ok(plan)
    }
}

fn grid(h: usize, w: usize, b: usize) -> Result<(usize, usize)> {
    if b == 0 || h == 0 || w == 0 || !h.is_multiple_of(b) || !w.is_multiple_of(b) {
        return Err(Error::Invalid(format!(
            "block size {b} does not tile a {h}x{w} image"
        )));
    }
    Ok((h / b, w / b))
}

/// Per-block saliency sums.
fn block_sums(s: &SaliencyMap, b: usize, gw: usize) -> Vec<f64> {
    let (h, w) = (s.height(), s.width());
    let mut out = vec![0.0; (h / b) * gw];
    for (p, &v) in s.values().data().iter().enumerate() {
        let (y, x) = (p / w, p % w);
        out[(y / b) * gw + x / b] += v as f64;
    }
    out
}

struct Blocks {
    gh: usize,
    gw: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Blocks {
    fn new(s1: &SaliencyMap, s2: &SaliencyMap, block_size: usize) -> Result<Self> {
        if (s1.height(), s1.width()) != (s2.height(), s2.width()) {
            return Err(Error::shape(
                "mix plan",
                format!(
                    "saliency maps {}x{} vs {}x{}",
                    s1.height(),
                    s1.width(),
                    s2.height(),
                    s2.width()
                ),
            ));
        }
        let (gh, gw) = grid(s1.height(), s1.width(), block_size)?;
        Ok(Blocks {
            gh,
            gw,
            s1: block_sums(s1, block_size, gw),
            s2: block_sums(s2, block_size, gw),
        })
    }

    fn n(&self) -> usize {
        self.gh * self.gw
    }

    fn in_window(&self, i: usize, j: usize, r: usize) -> bool {
        let (ri, ci) = (i / self.gw, i % self.gw);
        let (rj, cj) = (j / self.gw, j % self.gw);
        ri.abs_diff(rj) <= r && ci.abs_diff(cj) <= r
    }

    fn objective(&self, z: &[u8], pi1: &[usize], pi2: &[usize]) -> f64 {
        (0..self.n())
            .map(|i| {
                if z[i] == 1 {
                    self.s2[pi2[i]]
                } else {
                    self.s1[pi1[i]]
                }
            })
            .sum()
    }
}

/// Relative weight of the secondary tie-break in the transport step.
const TIE_WEIGHT: f64 = 1e-7;

/// Alternating search: `z` picks the more salient transported source per
/// block (ties keep source 1), then each transport is re-solved as a
/// windowed maximum-weight assignment given `z`.
pub fn optimize_mix_plan(s1: &SaliencyMap, s2: &SaliencyMap, cfg: &PlanConfig) -> Result<MixPlan> {
    optimize_mix_plan_traced(s1, s2, cfg).map(|(p, _)| p)
}

/// [`optimize_mix_plan`] plus the objective after the initial `z` step and
/// after each iteration.
pub fn optimize_mix_plan_traced(
    s1: &SaliencyMap,
    s2: &SaliencyMap,
    cfg: &PlanConfig,
) -> Result<(MixPlan, Vec<f64>)> {
    if cfg.n_iter == 0 {
        return Err(Error::Invalid("n_iter must be >= 1".into()));
    }
    let bl = Blocks::new(s1, s2, cfg.block_size)?;
    let n = bl.n();
    let mut pi1: Vec<usize> = (0..n).collect();
    let mut pi2: Vec<usize> = (0..n).collect();
    let choose_z = |pi1: &[usize], pi2: &[usize]| -> Vec<u8> {
        (0..n)
            .map(|i| u8::from(bl.s2[pi2[i]] > bl.s1[pi1[i]]))
            .collect()
    };
    let mut z = choose_z(&pi1, &pi2);
    let mut trace = vec![bl.objective(&z, &pi1, &pi2)];
    // objective after the next z step
    let settled = |pi1: &[usize], pi2: &[usize]| -> f64 {
        (0..n).map(|i| bl.s1[pi1[i]].max(bl.s2[pi2[i]])).sum()
    };
    for _ in 0..cfg.n_iter {
        let r = cfg.window_radius;
        // Many transports are optimal for a fixed z because blocks won by
        // the other source carry no weight. Among those, prefer placing each
        // such block where it beats the other source, so the next z step can
        // claim it; the tiny weight keeps the primary optimum unchanged.
        let solve = |own: &[f64],
                     other: &[f64],
                     other_pi: &[usize],
                     active: u8,
                     current: &[usize]|
         -> Vec<usize> {
            max_weight_assignment(n, |i, j| {
                bl.in_window(i, j, r).then(|| {
                    if z[i] == active {
                        own[j]
                    } else {
                        TIE_WEIGHT * (own[j] - other[other_pi[i]]).max(0.0)
                    }
                })
            })
            .unwrap_or_else(|| current.to_vec())
        };
        let new1 = solve(&bl.s1, &bl.s2, &pi2, 0, &pi1);
        let new2 = solve(&bl.s2, &bl.s1, &pi1, 1, &pi2);
        // a new transport must not lose for this z and must gain after it
        if bl.objective(&z, &new1, &pi2) >= bl.objective(&z, &pi1, &pi2)
            && settled(&new1, &pi2) > settled(&pi1, &pi2)
        {
            pi1 = new1;
        }
        if bl.objective(&z, &pi1, &new2) >= bl.objective(&z, &pi1, &pi2)
            && settled(&pi1, &new2) > settled(&pi1, &pi2)
        {
            pi2 = new2;
        }
        z = choose_z(&pi1, &pi2);
        trace.push(bl.objective(&z, &pi1, &pi2));
    }
    let objective = *trace.last().expect("nonempty trace");
    let plan = MixPlan {
        block_size: cfg.block_size,
        grid_h: bl.gh,
        grid_w: bl.gw,
        z,
        pi1,
        pi2,
        objective,
    };
    Ok((plan, trace))
}

/// Windowed permutations of `n` blocks, in lexicographic order.
fn windowed_permutations(bl: &Blocks, r: usize, limit: usize) -> Result<Vec<Vec<usize>>> {
    fn rec(
        bl: &Blocks,
        r: usize,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> bool {
        let i = cur.len();
        if i == used.len() {
            out.push(cur.clone());
            return out.len() <= limit;
        }
        for j in 0..used.len() {
            if !used[j] && bl.in_window(i, j, r) {
                used[j] = true;
                cur.push(j);
                let ok = rec(bl, r, cur, used, out, limit);
                cur.pop();
                used[j] = false;
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    let mut out = Vec::new();
    let mut used = vec![false; bl.n()];
    if !rec(bl, r, &mut Vec::new(), &mut used, &mut out, limit) {
        return Err(Error::Invalid(format!(
            "more than {limit} windowed permutations"
        )));
    }
    Ok(out)
}

/// Global optimum by enumeration of every binary `z` and every windowed
/// transport pair. Limited to at most 9 blocks.
pub fn exhaustive_mix_plan(
    s1: &SaliencyMap,
    s2: &SaliencyMap,
    cfg: &PlanConfig,
) -> Result<MixPlan> {
    let bl = Blocks::new(s1, s2, cfg.block_size)?;
    let n = bl.n();
    if n > 9 {
        return Err(Error::Invalid(format!(
            "exhaustive search supports <= 9 blocks, got {n}"
        )));
    }
    let perms = windowed_permutations(&bl, cfg.window_radius, 400_000)?;
    let mut best: Option<MixPlan> = None;
    for bits in 0u32..(1 << n) {
        let z: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
        // given z the two transports do not interact
        let pick = |sal: &[f64], active: u8| -> (usize, f64) {
            let mut arg = 0;
            let mut val = f64::NEG_INFINITY;
            for (k, p) in perms.iter().enumerate() {
                let v: f64 = (0..n).filter(|&i| z[i] == active).map(|i| sal[p[i]]).sum();
                if v > val {
                    val = v;
                    arg = k;
                }
            }
            (arg, val)
        };
        let (a1, v1) = pick(&bl.s1, 0);
        let (a2, v2) = pick(&bl.s2, 1);
        if best.as_ref().is_none_or(|b| v1 + v2 > b.objective) {
            best = Some(MixPlan {
                block_size: cfg.block_size,
                grid_h: bl.gh,
                grid_w: bl.gw,
                z,
                pi1: perms[a1].clone(),
                pi2: perms[a2].clone(),
                objective: v1 + v2,
            });
        }
    }
    Ok(best.expect("at least one z"))
}
