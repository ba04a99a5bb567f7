//! Ratcliff-Obershelp (gestalt pattern matching) similarity.
//!
//! The matcher repeatedly takes the longest common contiguous block (earliest
//! in the first sequence, then earliest in the second) and recurses on the
//! unmatched pieces to its left and right. The score is `2 * K / (|a| + |b|)`
//! where `K` is the total number of matched elements.
//!
//! A fixed tie-break makes `K` depend on argument order, so [`similarity`]
//! evaluates both orders and keeps the larger count.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::tokenize::normalize;

/// Unit of comparison for [`similarity_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Character,
    Token,
}

/// Longest common block of `a[alo..ahi]` and `b[blo..bhi]` as `(i, j, len)`.
fn longest_match<T: PartialEq>(a: &[T], b: &[T], alo: usize, ahi: usize, blo: usize, bhi: usize) -> (usize, usize, usize) {
    let width = bhi - blo;
    let mut prev = alloc::vec![0usize; width + 1];
    let mut cur = alloc::vec![0usize; width + 1];
    let (mut best_i, mut best_j, mut best_k) = (alo, blo, 0);
    for i in alo..ahi {
        for jj in 0..width {
            let j = blo + jj;
            cur[jj + 1] = if a[i] == b[j] { prev[jj] + 1 } else { 0 };
            let k = cur[jj + 1];
            // Strictly greater keeps the earliest end in `a` (hence the earliest
            // start for that length), then the earliest position in `b`.
            if k > best_k {
                best_k = k;
                best_i = i + 1 - k;
                best_j = j + 1 - k;
            }
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    (best_i, best_j, best_k)
}

/// Total matched elements `K` for `a` against `b` (order-dependent).
pub fn matched_count<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut total = 0;
    let mut stack: Vec<(usize, usize, usize, usize)> = alloc::vec![(0, a.len(), 0, b.len())];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (i, j, k) = longest_match(a, b, alo, ahi, blo, bhi);
        if k == 0 {
            continue;
        }
        total += k;
        stack.push((alo, i, blo, j));
        stack.push((i + k, ahi, j + k, bhi));
    }
    total
}

/// Symmetric gestalt score on raw sequences; two empty sequences score 1.
pub fn ratcliff_obershelp<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let n = a.len() + b.len();
    if n == 0 {
        return 1.0;
    }
    let k = matched_count(a, b).max(matched_count(b, a));
    2.0 * k as f64 / n as f64
}

/// Character-level similarity of two strings after lowercasing and collapsing
/// whitespace.
pub fn similarity(a: &str, b: &str) -> f64 {
    similarity_with(a, b, Granularity::Character)
}

pub fn similarity_with(a: &str, b: &str, granularity: Granularity) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    match granularity {
        Granularity::Character => {
            let a: Vec<char> = a.chars().collect();
            let b: Vec<char> = b.chars().collect();
            ratcliff_obershelp(&a, &b)
        }
        Granularity::Token => {
            let a: Vec<&str> = a.split(' ').filter(|s| !s.is_empty()).collect();
            let b: Vec<&str> = b.split(' ').filter(|s| !s.is_empty()).collect();
            ratcliff_obershelp(&a, &b)
        }
    }
}
