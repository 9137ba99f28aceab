//! Aggregation rules for gradients and models, plus the spread measures used
//! to reason about them.

use crate::error::{Error, Result};
use crate::vector::{check_uniform, ParamVector};

/// Coordinate-wise arithmetic mean.
pub fn average(vs: &[ParamVector]) -> Result<ParamVector> {
    let dim = check_uniform(vs)?;
    Ok(mean_of(vs.iter(), dim, vs.len()))
}

/// Sums in iteration order, then divides once.
fn mean_of<'a>(vs: impl Iterator<Item = &'a ParamVector>, dim: usize, count: usize) -> ParamVector {
    let mut acc = vec![0.0; dim];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    ParamVector::from(acc)
}

/// Coordinate-wise median. An even count yields the mean of the two middle values.
pub fn median(vs: &[ParamVector]) -> Result<ParamVector> {
    let dim = check_uniform(vs)?;
    let mut column = Vec::with_capacity(vs.len());
    let coords: Vec<f64> = (0..dim)
        .map(|i| {
            column.clear();
            column.extend(vs.iter().map(|v| v[i]));
            column.sort_unstable_by(f64::total_cmp);
            let mid = column.len() / 2;
            if column.len() % 2 == 1 {
                column[mid]
            } else {
                (column[mid - 1] + column[mid]) / 2.0
            }
        })
        .collect();
    Ok(ParamVector::from(coords))
}

/// The subset chosen by MDA together with its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MdaSelection {
    /// Ascending input indices of the minimum-diameter subset.
    pub subset: Vec<usize>,
    /// Maximum pairwise l2 distance inside `subset`.
    pub diameter: f64,
    pub aggregate: ParamVector,
}

/// Minimum-Diameter Averaging: the mean of the size-`(n - f)` subset whose
/// largest pairwise l2 distance is smallest.
pub fn mda(vs: &[ParamVector], f: usize) -> Result<ParamVector> {
    mda_select(vs, f).map(|s| s.aggregate)
}

/// Exhaustive MDA. Among equal-diameter subsets the lexicographically
/// smallest index tuple wins.
pub fn mda_select(vs: &[ParamVector], f: usize) -> Result<MdaSelection> {
    let dim = check_uniform(vs)?;
    let n = vs.len();
    if n < 2 * f + 1 {
        return Err(Error::MdaPrecondition {
            count: n,
            required: 2 * f + 1,
        });
    }
    let size = n - f;

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = vs[i].squared_distance(&vs[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut search = SubsetSearch {
        n,
        size,
        dist: &dist,
        current: Vec::with_capacity(size),
        best: None,
    };
    search.descend(0, 0.0);
    let (subset, sq_diameter) = search.best.expect("at least one subset exists");

    let aggregate = mean_of(subset.iter().map(|&i| &vs[i]), dim, size);
    Ok(MdaSelection {
        subset,
        diameter: sq_diameter.sqrt(),
        aggregate,
    })
}

/// Depth-first walk over index combinations in lexicographic order. A branch is
/// cut as soon as its partial diameter can no longer strictly beat the best,
/// so the first minimum found is also the lexicographically smallest.
struct SubsetSearch<'a> {
    n: usize,
    size: usize,
    dist: &'a [f64],
    current: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl SubsetSearch<'_> {
    fn descend(&mut self, start: usize, partial: f64) {
        if self.current.len() == self.size {
            if self.best.as_ref().is_none_or(|(_, b)| partial < *b) {
                self.best = Some((self.current.clone(), partial));
            }
            return;
        }
        let remaining = self.size - self.current.len();
        for next in start..=(self.n - remaining) {
            let widened = self
                .current
                .iter()
                .map(|&i| self.dist[i * self.n + next])
                .fold(partial, f64::max);
            if let Some((_, b)) = &self.best {
                if widened >= *b {
                    continue;
                }
            }
            self.current.push(next);
            self.descend(next + 1, widened);
            self.current.pop();
        }
    }
}

/// Largest pairwise l2 distance; zero for a singleton.
pub fn l2_diameter(vs: &[ParamVector]) -> Result<f64> {
    check_uniform(vs)?;
    let mut best: f64 = 0.0;
    for (i, a) in vs.iter().enumerate() {
        for b in &vs[i + 1..] {
            best = best.max(a.squared_distance(b));
        }
    }
    Ok(best.sqrt())
}

/// Sum over coordinates of the range (max - min) across `vs`.
pub fn coordwise_diameter_sum(vs: &[ParamVector]) -> Result<f64> {
    let dim = check_uniform(vs)?;
    Ok((0..dim)
        .map(|i| {
            let (lo, hi) = vs
                .iter()
                .map(|v| v[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                });
            hi - lo
        })
        .sum())
}

/// Nearest-rank quantile: the element at index `ceil(p * n) - 1` of the sorted values.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "quantile fraction must lie in [0, 1], got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let rank = p * sorted.len() as f64;
    // (n - f) / n is rarely exact in binary; snap products that are integral up to rounding.
    let rank = if (rank - rank.round()).abs() < 1e-9 {
        rank.round()
    } else {
        rank.ceil()
    };
    let idx = (rank as usize).clamp(1, sorted.len()) - 1;
    Ok(sorted[idx])
}

/// Gradient aggregation rule applied by servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gar {
    Average,
    Median,
    #[default]
    Mda,
}

impl Gar {
    pub fn as_str(self) -> &'static str {
        match self {
            Gar::Average => "average",
            Gar::Median => "median",
            Gar::Mda => "mda",
        }
    }

    pub fn aggregate(self, vs: &[ParamVector], f: usize) -> Result<ParamVector> {
        self.aggregate_with_selection(vs, f).map(|(agg, _)| agg)
    }

    /// Aggregates and, for MDA, also reports which inputs were averaged.
    pub fn aggregate_with_selection(
        self,
        vs: &[ParamVector],
        f: usize,
    ) -> Result<(ParamVector, Option<Vec<usize>>)> {
        match self {
            Gar::Average => Ok((average(vs)?, None)),
            Gar::Median => Ok((median(vs)?, None)),
            Gar::Mda => {
                let s = mda_select(vs, f)?;
                Ok((s.aggregate, Some(s.subset)))
            }
        }
    }
}

impl std::str::FromStr for Gar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Gar::Average),
            "median" => Ok(Gar::Median),
            "mda" => Ok(Gar::Mda),
            other => Err(Error::InvalidArgument(format!("unknown GAR `{other}`"))),
        }
    }
}
