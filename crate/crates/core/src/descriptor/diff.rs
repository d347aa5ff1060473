//! Line-granularity LCS diff with exact round-trip application.
//!
//! Texts are split on `'\n'` without dropping the final empty segment, so
//! `lines.join("\n")` reproduces the input byte for byte (including whether
//! it ends in a newline).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open range of 0-based line indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

impl LineRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub buggy: LineRange,
    pub fixed: LineRange,
    pub removed: Vec<String>,
    pub added: Vec<String>,
    /// Up to `context_radius` buggy lines before the hunk.
    pub context_before: Vec<String>,
    /// Up to `context_radius` buggy lines after the hunk.
    pub context_after: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDiff {
    pub hunks: Vec<Hunk>,
    pub context_radius: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("empty diff")]
    EmptyDiff,
    #[error("empty program text")]
    EmptyText,
    #[error("hunk {index} does not apply: {reason}")]
    Mismatch { index: usize, reason: String },
}

fn split(text: &str) -> Vec<&str> {
    text.split('\n').collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Op {
    Equal,
    Delete,
    Insert,
}

/// Minimal edit script between two line sequences (classic LCS table over
/// the region left after trimming the common prefix and suffix).
fn edit_script(a: &[&str], b: &[&str]) -> Vec<Op> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let am = &a[prefix..a.len() - suffix];
    let bm = &b[prefix..b.len() - suffix];
    let (n, m) = (am.len(), bm.len());

    // lcs[i][j] = LCS length of am[i..] and bm[j..]
    let mut lcs = vec![0u32; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[at(i, j)] = if am[i] == bm[j] {
                lcs[at(i + 1, j + 1)] + 1
            } else {
                lcs[at(i + 1, j)].max(lcs[at(i, j + 1)])
            };
        }
    }

    let mut ops = vec![Op::Equal; prefix];
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && am[i] == bm[j] {
            ops.push(Op::Equal);
            i += 1;
            j += 1;
        } else if j < m && (i == n || lcs[at(i, j + 1)] >= lcs[at(i + 1, j)]) {
            ops.push(Op::Insert);
            j += 1;
        } else {
            ops.push(Op::Delete);
            i += 1;
        }
    }
    ops.extend(std::iter::repeat(Op::Equal).take(suffix));
    ops
}

/// Computes the patch turning `buggy` into `fixed`. Each maximal run of
/// changed lines becomes one hunk.
pub fn compute_diff(buggy: &str, fixed: &str, context_radius: usize) -> Result<PatchDiff, DiffError> {
    if buggy.is_empty() || fixed.is_empty() {
        return Err(DiffError::EmptyText);
    }
    if buggy == fixed {
        return Err(DiffError::EmptyDiff);
    }
    let a = split(buggy);
    let b = split(fixed);
    let ops = edit_script(&a, &b);

    let mut hunks = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut k = 0;
    while k < ops.len() {
        if ops[k] == Op::Equal {
            i += 1;
            j += 1;
            k += 1;
            continue;
        }
        let (bs, fs) = (i, j);
        while k < ops.len() && ops[k] != Op::Equal {
            match ops[k] {
                Op::Delete => i += 1,
                Op::Insert => j += 1,
                Op::Equal => unreachable!(),
            }
            k += 1;
        }
        let owned = |s: &[&str]| s.iter().map(|l| l.to_string()).collect::<Vec<_>>();
        hunks.push(Hunk {
            buggy: LineRange { start: bs, end: i },
            fixed: LineRange { start: fs, end: j },
            removed: owned(&a[bs..i]),
            added: owned(&b[fs..j]),
            context_before: owned(&a[bs.saturating_sub(context_radius)..bs]),
            context_after: owned(&a[i..(i + context_radius).min(a.len())]),
        });
    }
    Ok(PatchDiff {
        hunks,
        context_radius,
    })
}

/// Applies `diff` to `buggy`, checking every removed line against the text.
pub fn apply(buggy: &str, diff: &PatchDiff) -> Result<String, DiffError> {
    let a = split(buggy);
    let mut out: Vec<&str> = Vec::with_capacity(a.len());
    let mut pos = 0;
    for (index, h) in diff.hunks.iter().enumerate() {
        if h.buggy.start < pos || h.buggy.end > a.len() || h.buggy.len() != h.removed.len() {
            return Err(DiffError::Mismatch {
                index,
                reason: "range out of order or out of bounds".into(),
            });
        }
        if a[h.buggy.start..h.buggy.end]
            .iter()
            .zip(&h.removed)
            .any(|(x, y)| *x != y)
        {
            return Err(DiffError::Mismatch {
                index,
                reason: "removed lines do not match".into(),
            });
        }
        out.extend_from_slice(&a[pos..h.buggy.start]);
        out.extend(h.added.iter().map(String::as_str));
        pos = h.buggy.end;
    }
    out.extend_from_slice(&a[pos..]);
    Ok(out.join("\n"))
}

/// Renders hunks in unified-diff style (1-based line numbers) for prompts.
pub fn render(diff: &PatchDiff) -> String {
    let mut s = String::new();
    for h in &diff.hunks {
        let before = h.context_before.len();
        let after = h.context_after.len();
        s.push_str(&format!(
            "@@ -{},{} +{},{} @@\n",
            (h.buggy.start + 1).saturating_sub(before),
            before + h.removed.len() + after,
            (h.fixed.start + 1).saturating_sub(before),
            before + h.added.len() + after,
        ));
        for l in &h.context_before {
            s.push_str(&format!(" {l}\n"));
        }
        for l in &h.removed {
            s.push_str(&format!("-{l}\n"));
        }
        for l in &h.added {
            s.push_str(&format!("+{l}\n"));
        }
        for l in &h.context_after {
            s.push_str(&format!(" {l}\n"));
        }
    }
    s
}
