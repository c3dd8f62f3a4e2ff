//! Shared level-wise tree builder used by the decision tree and boosting.
//!
//! Every node split maximizes S_L^2/W_L + S_R^2/W_R - S^2/W where S is the
//! weighted sum of the per-sample target and W the weight sum. With a 0/1
//! target that is half the weighted Gini decrease; with residuals it is the
//! weighted variance reduction. Thresholds are midpoints between adjacent
//! distinct values; ties go to the lowest column, then the lowest threshold.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// Per-feature sample orderings, computed once per fit.
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub(crate) fn new(x: &Matrix) -> Self {
        let order = (0..x.cols())
            .map(|j| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Stop splitting nodes whose target is constant (0/1 targets).
    pub stop_when_pure: bool,
}

/// Sample inputs to the builder. Leaves hold sum(w*t) / sum(w*h).
pub(crate) struct Targets<'a> {
    pub t: &'a [f64],
    pub h: &'a [f64],
    pub w: &'a [f64],
}

const NONE: u32 = u32::MAX;

struct Slot {
    node: usize,
    depth: usize,
    count: usize,
    s: f64,
    w: f64,
    num: f64,
    den: f64,
}

#[derive(Clone, Copy)]
struct Acc {
    s: f64,
    w: f64,
    count: usize,
    last: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = a / 2.0 + b / 2.0;
    if t >= b || t < a {
        a
    } else {
        t
    }
}

pub(crate) fn grow(x: &Matrix, pre: &Presorted, tg: &Targets<'_>, p: &GrowParams) -> Tree {
    let n = x.rows();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut slot_of = vec![NONE; n];
    let mut root = Slot {
        node: 0,
        depth: 0,
        count: 0,
        s: 0.0,
        w: 0.0,
        num: 0.0,
        den: 0.0,
    };
    for i in 0..n {
        if tg.w[i] > 0.0 {
            slot_of[i] = 0;
            root.count += 1;
            root.s += tg.w[i] * tg.t[i];
            root.w += tg.w[i];
            root.num += tg.w[i] * tg.t[i];
            root.den += tg.w[i] * tg.h[i];
        }
    }
    let mut frontier = vec![root];
    while !frontier.is_empty() {
        let splittable: Vec<bool> = frontier
            .iter()
            .map(|sl| {
                p.max_depth.is_none_or(|m| sl.depth < m)
                    && sl.count >= p.min_samples_split.max(2)
                    && !(p.stop_when_pure && (sl.s == 0.0 || sl.s == sl.w))
            })
            .collect();
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; frontier.len()];
        if splittable.iter().any(|&b| b) {
            let mut acc = vec![
                Acc {
                    s: 0.0,
                    w: 0.0,
                    count: 0,
                    last: 0.0
                };
                frontier.len()
            ];
            for (j, order) in pre.order.iter().enumerate() {
                acc.iter_mut().for_each(|a| {
                    *a = Acc {
                        s: 0.0,
                        w: 0.0,
                        count: 0,
                        last: 0.0,
                    }
                });
                for &i in order {
                    let i = i as usize;
                    let k = slot_of[i];
                    if k == NONE || !splittable[k as usize] {
                        continue;
                    }
                    let k = k as usize;
                    let v = x.get(i, j);
                    let a = &mut acc[k];
                    if a.count > 0 && v > a.last {
                        let sl = &frontier[k];
                        let (sr, wr) = (sl.s - a.s, sl.w - a.w);
                        if a.w > 0.0 && wr > 0.0 {
                            let gain = a.s * a.s / a.w + sr * sr / wr - sl.s * sl.s / sl.w;
                            if best[k].is_none_or(|(g, _, _)| gain > g) {
                                best[k] = Some((gain, j, midpoint(a.last, v)));
                            }
                        }
                    }
                    a.s += tg.w[i] * tg.t[i];
                    a.w += tg.w[i];
                    a.count += 1;
                    a.last = v;
                }
            }
        }
        // Materialize splits and leaves, then route samples to children.
        let mut child_of: Vec<Option<(usize, usize)>> = vec![None; frontier.len()];
        let mut next: Vec<Slot> = Vec::new();
        for (k, sl) in frontier.iter().enumerate() {
            match best[k] {
                Some((_, feature, threshold)) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[sl.node] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    child_of[k] = Some((next.len(), next.len() + 1));
                    for node in [left, right] {
                        next.push(Slot {
                            node,
                            depth: sl.depth + 1,
                            count: 0,
                            s: 0.0,
                            w: 0.0,
                            num: 0.0,
                            den: 0.0,
                        });
                    }
                }
                None => {
                    let value = if sl.den.abs() < 1e-150 { 0.0 } else { sl.num / sl.den };
                    nodes[sl.node] = Node::Leaf { value };
                }
            }
        }
        for i in 0..n {
            let k = slot_of[i];
            if k == NONE {
                continue;
            }
            let k = k as usize;
            match child_of[k] {
                None => slot_of[i] = NONE,
                Some((l, r)) => {
                    let (feature, threshold) = match best[k] {
                        Some((_, f, t)) => (f, t),
                        None => unreachable!(),
                    };
                    let c = if x.get(i, feature) <= threshold { l } else { r };
                    slot_of[i] = c as u32;
                    let sl = &mut next[c];
                    sl.count += 1;
                    sl.s += tg.w[i] * tg.t[i];
                    sl.w += tg.w[i];
                    sl.num += tg.w[i] * tg.t[i];
                    sl.den += tg.w[i] * tg.h[i];
                }
            }
        }
        frontier = next;
    }
    Tree { nodes }
}
