//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use swarmplan::map::VoxelGrid;
use swarmplan::Point3;

fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Power-basis coefficients of a Bernstein polynomial in `τ ∈ [0, 1]`.
pub fn power_coefficients(cps: &[f64]) -> Vec<f64> {
    let n = cps.len() - 1;
    (0..=n)
        .map(|j| {
            (0..=j)
                .map(|k| {
                    let sign = if (j - k) % 2 == 0 { 1.0 } else { -1.0 };
                    cps[k] * choose(n, k) * choose(n - k, j - k) * sign
                })
                .sum()
        })
        .collect()
}

/// `order`-th time derivative at `τ` of the power-basis polynomial over a
/// segment lasting `h`.
pub fn power_derivative(coef: &[f64], order: usize, tau: f64, h: f64) -> f64 {
    let mut s = 0.0;
    for (j, c) in coef.iter().enumerate().skip(order) {
        let falling: f64 = (0..order).map(|i| (j - i) as f64).product();
        s += c * falling * tau.powi((j - order) as i32);
    }
    s / h.powi(order as i32)
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `∫ ‖d^φ p/dt^φ‖² dt` of one segment, by power-basis conversion and
/// composite Simpson quadrature.
pub fn quadrature_energy(cps: &[Point3], h: f64, phi: usize) -> f64 {
    let coefs: Vec<Vec<f64>> = (0..3).map(|a| power_coefficients(&cps.iter().map(|p| p[a]).collect::<Vec<_>>())).collect();
    let f = |tau: f64| coefs.iter().map(|c| power_derivative(c, phi, tau, h).powi(2)).sum::<f64>();
    simpson(f, 0.0, 1.0, 1000) * h
}

pub fn random_point(rng: &mut impl Rng, scale: f64) -> Point3 {
    Point3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

/// Relative motion from `b0 - a0` to `b1 - a1`, z divided by `c_dw`, stays
/// farther than `r_sum` from the origin.
fn pair_clear(a0: Point3, a1: Point3, b0: Point3, b1: Point3, r_sum: f64, c_dw: f64) -> bool {
    let t = |v: Point3| Point3::new(v.x, v.y, v.z / c_dw);
    let p0 = t(b0 - a0);
    let d = t(b1 - a1) - p0;
    let s = if d.norm_squared() == 0.0 { 0.0 } else { (-p0.dot(&d) / d.norm_squared()).clamp(0.0, 1.0) };
    (p0 + d * s).norm_squared() > r_sum * r_sum
}

/// Optimal sum of arrival times by Dijkstra over joint states
/// `(positions, finished set)`. A finished agent stays on its goal for
/// good; every step costs the number of unfinished agents.
pub fn brute_force_flow_time(grid: &VoxelGrid, starts: &[usize], goals: &[usize], radii: &[f64], c_dw: f64) -> Option<usize> {
    let n = starts.len();
    let moves = |c: usize| {
        let mut out = Vec::new();
        grid.neighbors(c, &mut out);
        out.push(c);
        out
    };
    let pos = |c: usize| grid.position_flat(c);
    type State = (Vec<usize>, u32);
    let mut dist: HashMap<State, usize> = HashMap::new();
    let mut heap = BinaryHeap::new();
    // agents starting on their goal may finish at time zero
    let startable: u32 = (0..n).filter(|&i| starts[i] == goals[i]).fold(0, |m, i| m | 1 << i);
    let mut sub = startable;
    loop {
        let s = (starts.to_vec(), sub);
        dist.insert(s.clone(), 0);
        heap.push(Reverse((0usize, s)));
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & startable;
    }
    let all = (1u32 << n) - 1;
    while let Some(Reverse((d, (cells, done)))) = heap.pop() {
        if dist.get(&(cells.clone(), done)).is_some_and(|&best| best < d) {
            continue;
        }
        if done == all {
            return Some(d);
        }
        let active = n - done.count_ones() as usize;
        // enumerate joint moves
        let options: Vec<Vec<usize>> = (0..n).map(|i| if done & (1 << i) != 0 { vec![cells[i]] } else { moves(cells[i]) }).collect();
        let mut idx = vec![0usize; n];
        'outer: loop {
            let next: Vec<usize> = (0..n).map(|i| options[i][idx[i]]).collect();
            let ok = (0..n).all(|i| {
                (i + 1..n).all(|j| pair_clear(pos(cells[i]), pos(next[i]), pos(cells[j]), pos(next[j]), radii[i] + radii[j], c_dw))
            });
            if ok {
                let can_finish: u32 = (0..n).filter(|&i| done & (1 << i) == 0 && next[i] == goals[i]).fold(0, |m, i| m | 1 << i);
                let mut sub = can_finish;
                loop {
                    let state = (next.clone(), done | sub);
                    let nd = d + active;
                    if dist.get(&state).is_none_or(|&old| nd < old) {
                        dist.insert(state.clone(), nd);
                        heap.push(Reverse((nd, state)));
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & can_finish;
                }
            }
            for i in 0..n {
                idx[i] += 1;
                if idx[i] < options[i].len() {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
    }
    None
}
