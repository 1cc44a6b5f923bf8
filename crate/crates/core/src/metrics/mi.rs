use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One cell of a joint table: an outcome code per variable.
pub type Outcome = Vec<u32>;

/// Sparse joint probability table over a fixed tuple of discrete variables.
#[derive(Clone, Debug, Default)]
pub struct JointTable {
    n_vars: usize,
    cells: BTreeMap<Outcome, f64>,
}

impl JointTable {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            cells: BTreeMap::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Accumulates `p` onto an outcome.
    pub fn add(&mut self, outcome: Outcome, p: f64) {
        assert_eq!(outcome.len(), self.n_vars, "outcome arity");
        if p != 0.0 {
            *self.cells.entry(outcome).or_insert(0.0) += p;
        }
    }

    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.total();
        if (t - 1.0).abs() > 1e-9 || self.cells.values().any(|p| *p < 0.0) {
            return Err(Error::Distribution(format!("joint table sums to {t}")));
        }
        Ok(())
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Outcome, f64)> {
        self.cells.iter().map(|(k, v)| (k, *v))
    }

    fn project(outcome: &[u32], vars: &[usize]) -> Outcome {
        vars.iter().map(|&v| outcome[v]).collect()
    }

    pub fn marginal(&self, vars: &[usize]) -> BTreeMap<Outcome, f64> {
        let mut m = BTreeMap::new();
        for (o, p) in &self.cells {
            *m.entry(Self::project(o, vars)).or_insert(0.0) += p;
        }
        m
    }

    /// Shannon entropy (nats) of a group of variables.
    pub fn entropy(&self, vars: &[usize]) -> f64 {
        self.marginal(vars)
            .values()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    /// `I(A;B) = Σ p(a,b) ln[p(a,b) / (p(a)p(b))]`.
    pub fn mutual_information(&self, a: &[usize], b: &[usize]) -> f64 {
        let ab: Vec<usize> = a.iter().chain(b).copied().collect();
        let pa = self.marginal(a);
        let pb = self.marginal(b);
        self.marginal(&ab)
            .iter()
            .filter(|(_, p)| **p > 0.0)
            .map(|(o, p)| {
                let (oa, ob) = o.split_at(a.len());
                p * (p / (pa[oa] * pb[ob])).ln()
            })
            .sum()
    }

    /// `I(A;B|C) = Σ p(a,b,c) ln[p(a,b,c) p(c) / (p(a,c) p(b,c))]`.
    pub fn conditional_mutual_information(&self, a: &[usize], b: &[usize], c: &[usize]) -> f64 {
        let abc: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
        let ac: Vec<usize> = a.iter().chain(c).copied().collect();
        let bc: Vec<usize> = b.iter().chain(c).copied().collect();
        let pc = self.marginal(c);
        let pac = self.marginal(&ac);
        let pbc = self.marginal(&bc);
        self.marginal(&abc)
            .iter()
            .filter(|(_, p)| **p > 0.0)
            .map(|(o, p)| {
                let oa = &o[..a.len()];
                let ob = &o[a.len()..a.len() + b.len()];
                let oc = &o[a.len() + b.len()..];
                let kac: Outcome = oa.iter().chain(oc).copied().collect();
                let kbc: Outcome = ob.iter().chain(oc).copied().collect();
                p * (p * pc[oc] / (pac[&kac] * pbc[&kbc])).ln()
            })
            .sum()
    }

    /// Expected log loss of the Bayes-optimal predictor of `target` given
    /// `inputs`, i.e. `H(target | inputs)`.
    pub fn bayes_log_loss(&self, target: &[usize], inputs: &[usize]) -> f64 {
        let all: Vec<usize> = inputs.iter().chain(target).copied().collect();
        self.entropy(&all) - self.entropy(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::discrete_mutual_information;

    #[test]
    fn independent_is_zero() {
        let mut t = JointTable::new(2);
        for x in 0..2 {
            for y in 0..3 {
                t.add(
                    vec![x, y],
                    [0.3, 0.7][x as usize] * [0.2, 0.5, 0.3][y as usize],
                );
            }
        }
        assert!(discrete_mutual_information(&t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identity_coupling_is_ln2() {
        let mut t = JointTable::new(2);
        t.add(vec![0, 0], 0.5);
        t.add(vec![1, 1], 0.5);
        let mi = discrete_mutual_information(&t).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn non_normalized_rejected() {
        let mut t = JointTable::new(2);
        t.add(vec![0, 0], 0.4);
        assert!(discrete_mutual_information(&t).is_err());
    }

    #[test]
    fn chain_rule_on_random_tables() {
        use rand::Rng;
        let mut rng = crate::rng::rng(3);
        for _ in 0..50 {
            let mut t = JointTable::new(3);
            let mut raw = Vec::new();
            for a in 0..3 {
                for b in 0..2 {
                    for c in 0..3 {
                        raw.push((vec![a, b, c], rng.random::<f64>()));
                    }
                }
            }
            let z: f64 = raw.iter().map(|r| r.1).sum();
            for (o, p) in raw {
                t.add(o, p / z);
            }
            let lhs = t.mutual_information(&[0, 1], &[2]);
            let rhs = t.mutual_information(&[0], &[2])
                + t.conditional_mutual_information(&[1], &[2], &[0]);
            assert!((lhs - rhs).abs() < 1e-9);
            // entropy route agrees with the definitional sum
            let via_h = t.entropy(&[0, 1]) + t.entropy(&[2]) - t.entropy(&[0, 1, 2]);
            assert!((lhs - via_h).abs() < 1e-9);
        }
    }
}
