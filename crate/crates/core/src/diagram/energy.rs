use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use super::{Diagram, LineKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Integer combination of orbital energies `Σ c_x ε_x`, keyed by line label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinearForm {
    terms: BTreeMap<String, i64>,
}

impl LinearForm {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(label: &str, coeff: i64) -> Self {
        let mut f = Self::zero();
        f.add_term(label, coeff);
        f
    }

    pub fn add_term(&mut self, label: &str, coeff: i64) {
        let c = self.terms.entry(label.to_string()).or_insert(0);
        *c += coeff;
        if *c == 0 {
            self.terms.remove(label);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, i64)> {
        self.terms.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn coefficient(&self, label: &str) -> i64 {
        self.terms.get(label).copied().unwrap_or(0)
    }

    pub fn eval<T: Scalar>(&self, mut energy: impl FnMut(&str) -> T) -> T {
        self.terms
            .iter()
            .fold(T::zero(), |s, (k, &c)| s + T::of(c as f64) * energy(k))
    }

    /// Renders as `(ε_a+ε_b−ε_t−ε_n)`: positive terms first, then negative
    /// ones; within each group labels follow `order`, unknown labels last in
    /// alphabetical order.
    pub fn render(&self, order: &[&str]) -> String {
        let rank = |l: &str| order.iter().position(|&o| o == l).unwrap_or(order.len());
        let mut terms: Vec<(&str, i64)> = self.terms().collect();
        terms.sort_by(|a, b| {
            (a.1 < 0)
                .cmp(&(b.1 < 0))
                .then(rank(a.0).cmp(&rank(b.0)))
                .then(a.0.cmp(b.0))
        });
        let mut s = String::from("(");
        for (i, (label, c)) in terms.iter().enumerate() {
            if *c < 0 {
                s.push('−');
            } else if i > 0 {
                s.push('+');
            }
            if c.abs() != 1 {
                s.push_str(&c.abs().to_string());
            }
            s.push_str("ε_");
            s.push_str(label);
        }
        if terms.is_empty() {
            s.push('0');
        }
        s.push(')');
        s
    }

    /// Parses the output of [`LinearForm::render`]; ASCII `-` and `e_` are
    /// accepted as well.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Notation(format!("cannot parse energy sum {text:?}"));
        let body = text.trim();
        let body = body.strip_prefix('(').and_then(|b| b.strip_suffix(')')).unwrap_or(body);
        let mut f = Self::zero();
        if body.trim() == "0" {
            return Ok(f);
        }
        let mut chars = body.chars().peekable();
        loop {
            while chars.peek().is_some_and(|c| c.is_whitespace()) {
                chars.next();
            }
            if chars.peek().is_none() {
                break;
            }
            let mut sign = 1;
            match chars.peek() {
                Some('+') => {
                    chars.next();
                }
                Some('-') | Some('−') => {
                    sign = -1;
                    chars.next();
                }
                _ => {}
            }
            while chars.peek().is_some_and(|c| c.is_whitespace()) {
                chars.next();
            }
            let mut digits = String::new();
            while let Some(c) = chars.peek().filter(|c| c.is_ascii_digit()) {
                digits.push(*c);
                chars.next();
            }
            let coeff: i64 = if digits.is_empty() {
                1
            } else {
                digits.parse().map_err(|_| bad())?
            };
            match chars.next() {
                Some('ε') | Some('e') => {}
                _ => return Err(bad()),
            }
            if chars.next() != Some('_') {
                return Err(bad());
            }
            let mut label = String::new();
            while let Some(c) = chars.peek().filter(|c| !matches!(c, '+' | '-' | '−')) {
                label.push(*c);
                chars.next();
            }
            if label.trim().is_empty() {
                return Err(bad());
            }
            f.add_term(label.trim(), sign * coeff);
        }
        Ok(f)
    }
}

impl fmt::Display for LinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}

impl Add for LinearForm {
    type Output = LinearForm;

    fn add(mut self, rhs: LinearForm) -> LinearForm {
        for (k, c) in rhs.terms {
            self.add_term(&k, c);
        }
        self
    }
}

impl Neg for LinearForm {
    type Output = LinearForm;

    fn neg(mut self) -> LinearForm {
        for c in self.terms.values_mut() {
            *c = -*c;
        }
        self
    }
}

impl Sub for LinearForm {
    type Output = LinearForm;

    fn sub(self, rhs: LinearForm) -> LinearForm {
        self + (-rhs)
    }
}

/// `sign × ∏ factors`, each factor a cumulative net outflow energy.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatorProduct {
    pub sign: i32,
    pub factors: Vec<LinearForm>,
}

impl DenominatorProduct {
    pub fn eval<T: Scalar>(&self, mut energy: impl FnMut(&str) -> T) -> T {
        self.factors
            .iter()
            .fold(T::of(self.sign as f64), |p, f| p * f.eval(&mut energy))
    }
}

impl Diagram {
    /// Net outflow energy of a node set: energy carried out by lines created
    /// inside and absorbed outside, minus the reverse, over non-free lines.
    pub fn e_noe(&self, nodes: &[usize]) -> LinearForm {
        let mut f = LinearForm::zero();
        for (i, l) in self.lines().iter().enumerate() {
            if self.line_kind(i) == LineKind::Free {
                continue;
            }
            let from_in = nodes.contains(&self.node_of(l.from));
            let to_in = nodes.contains(&self.node_of(l.to));
            if from_in && !to_in {
                f.add_term(&l.label, 1);
            } else if to_in && !from_in {
                f.add_term(&l.label, -1);
            }
        }
        f
    }

    /// Nodes at or below solid vertex `i` (1-based, bottom first), including
    /// the effective vertex when it is not above.
    pub fn cut_nodes(&self, i: usize) -> Vec<usize> {
        let top = self.vertices()[i - 1].level;
        (0..=self.effective_node())
            .filter(|&n| self.node_level(n) <= top)
            .collect()
    }

    /// Downgoing minus upgoing line energies across the horizontal cut just
    /// above solid vertex `i` (1-based).
    pub fn cut_denominator(&self, i: usize) -> Result<LinearForm> {
        if i == 0 || i >= self.n_vertices() {
            return Err(Error::InvalidDiagram(format!(
                "no cut above vertex {i} of a {}-vertex diagram",
                self.n_vertices()
            )));
        }
        let cut = self.vertices()[i - 1].level;
        let mut f = LinearForm::zero();
        for (k, l) in self.lines().iter().enumerate() {
            if self.line_kind(k) == LineKind::Free {
                continue;
            }
            let a = self.node_level(self.node_of(l.from));
            let b = self.node_level(self.node_of(l.to));
            if a <= cut && cut < b {
                f.add_term(&l.label, -1);
            } else if b <= cut && cut < a {
                f.add_term(&l.label, 1);
            }
        }
        Ok(f)
    }

    pub fn cut_denominators(&self) -> Vec<LinearForm> {
        (1..self.n_vertices())
            .map(|i| self.cut_denominator(i).expect("cut index in range"))
            .collect()
    }

    /// `(−1)^(n−1) ∏_i E_noe(V_1 … V_i)` over the `n − 1` bottom segments.
    pub fn denominator_product(&self) -> DenominatorProduct {
        let n = self.n_vertices();
        DenominatorProduct {
            sign: if n % 2 == 1 { 1 } else { -1 },
            factors: (1..n).map(|i| self.e_noe(&self.cut_nodes(i))).collect(),
        }
    }

    /// Net outflow energy of every node, effective vertex last.
    pub fn vertex_e_noe(&self) -> Vec<LinearForm> {
        (0..=self.effective_node()).map(|v| self.e_noe(&[v])).collect()
    }
}
