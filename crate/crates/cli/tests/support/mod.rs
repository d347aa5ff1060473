//! The C++ to Rust fixture: seed pairs and the scripted model that answers
//! the pipeline's prompts for them. The replay cache shipped under
//! `fixtures/cpp2rust` was recorded from this responder.
#![allow(dead_code)]

use std::path::PathBuf;

use bugbridge_core::llm::CompletionRequest;
use serde_json::json;

pub struct Seed {
    pub name: &'static str,
    pub buggy: &'static str,
    pub fixed: &'static str,
    pub defect_type: &'static str,
    pub root_cause: &'static str,
    pub transferable: bool,
    pub rationale: &'static str,
    pub tests: &'static [&'static str],
    /// Reply per translation attempt, in order.
    pub translations: &'static [Reply],
    pub trigger_condition: &'static str,
    pub expected_failure: &'static str,
    pub trigger_inputs: &'static [&'static str],
    /// Reply per injection candidate, in order.
    pub candidates: &'static [Reply],
}

#[derive(Clone, Copy)]
pub enum Reply {
    Code(&'static str),
    Prose(&'static str),
}

const SUM_FIXED: &str = r#"#include <cstdio>

int main() {
    int n = 0;
    scanf("%d", &n);
    long long sum = 0;
    for (int i = 0; i < n; i++) {
        int x = 0;
        scanf("%d", &x);
        sum += x;
    }
    printf("%lld\n", sum);
    return 0;
}
"#;

const SUM_BUGGY: &str = r#"#include <cstdio>

int main() {
    int n = 0;
    scanf("%d", &n);
    long long sum = 0;
    for (int i = 0; i < n - 1; i++) {
        int x = 0;
        scanf("%d", &x);
        sum += x;
    }
    printf("%lld\n", sum);
    return 0;
}
"#;

const SUM_RS_FIXED: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut sum: i64 = 0;
    for i in 1..=n {
        sum += nums[i];
    }
    println!("{}", sum);
}
"#;

const SUM_RS_BROKEN: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0];
    let mut sum: i64 = 0;
    for i in 1..=n {
        sum += nums[i];
    }
    println!("{}", sum);
}
"#;

const SUM_RS_BUGGY: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut sum: i64 = 0;
    for i in 1..n {
        sum += nums[i];
    }
    println!("{}", sum);
}
"#;

const SUM_RS_OVERSHOOT: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut sum: i64 = 0;
    for i in 0..n {
        sum += nums[i];
    }
    println!("{}", sum);
}
"#;

const MAX_FIXED: &str = r#"#include <cstdio>

int main() {
    int n = 0;
    scanf("%d", &n);
    int best = 0;
    for (int i = 0; i < n; i++) {
        int x = 0;
        scanf("%d", &x);
        if (i == 0 || x > best) {
            best = x;
        }
    }
    printf("%d\n", best);
    return 0;
}
"#;

const MAX_BUGGY: &str = r#"#include <cstdio>

int main() {
    int n = 0;
    scanf("%d", &n);
    int best = 0;
    for (int i = 0; i < n; i++) {
        int x = 0;
        scanf("%d", &x);
        if (x > best) {
            best = x;
        }
    }
    printf("%d\n", best);
    return 0;
}
"#;

const MAX_RS_FIXED: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut best: i64 = 0;
    for i in 0..n {
        let x = nums[1 + i];
        if i == 0 || x > best {
            best = x;
        }
    }
    println!("{}", best);
}
"#;

const MAX_RS_BUGGY: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut best: i64 = 0;
    for i in 0..n {
        let x = nums[1 + i];
        if x > best {
            best = x;
        }
    }
    println!("{}", best);
}
"#;

const MAX_RS_MIN_SEED: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut best = if n == 0 { 0 } else { i64::MIN };
    for i in 0..n {
        let x = nums[1 + i];
        if x > best {
            best = x;
        }
    }
    println!("{}", best);
}
"#;

const MAX_RS_GE: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let nums: Vec<i64> = input.split_whitespace().map(|t| t.parse().unwrap()).collect();
    let n = nums[0] as usize;
    let mut best: i64 = 0;
    for i in 0..n {
        let x = nums[1 + i];
        if x >= best {
            best = x;
        }
    }
    println!("{}", best);
}
"#;

const PRIME_FIXED: &str = r#"#include <cstdio>

static bool is_prime(int n) {
    if (n < 2) {
        return false;
    }
    for (int i = 2; i * i <= n; i++) {
        if (n % i == 0) {
            return false;
        }
    }
    return true;
}

int main() {
    int n = 0;
    scanf("%d", &n);
    printf("%s\n", is_prime(n) ? "prime" : "composite");
    return 0;
}
"#;

const PRIME_BUGGY: &str = r#"#include <cstdio>

static bool is_prime(int n) {
    if (n < 2) {
        return false;
    }
    for (int i = 2; i * i < n; i++) {
        if (n % i == 0) {
            return false;
        }
    }
    return true;
}

int main() {
    int n = 0;
    scanf("%d", &n);
    printf("%s\n", is_prime(n) ? "prime" : "composite");
    return 0;
}
"#;

const PRIME_RS_FIXED: &str = r#"use std::io::Read;

fn is_prime(n: i64) -> bool {
    if n < 2 {
        return false;
    }
    let mut i = 2;
    while i * i <= n {
        if n % i == 0 {
            return false;
        }
        i += 1;
    }
    true
}

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let n: i64 = input.trim().parse().unwrap();
    println!("{}", if is_prime(n) { "prime" } else { "composite" });
}
"#;

const PRIME_RS_BOOL: &str = r#"use std::io::Read;

fn is_prime(n: i64) -> bool {
    if n < 2 {
        return false;
    }
    let mut i = 2;
    while i * i <= n {
        if n % i == 0 {
            return false;
        }
        i += 1;
    }
    true
}

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let n: i64 = input.trim().parse().unwrap();
    println!("{}", is_prime(n));
}
"#;

const PRIME_RS_BUGGY: &str = r#"use std::io::Read;

fn is_prime(n: i64) -> bool {
    if n < 2 {
        return false;
    }
    let mut i = 2;
    while i * i < n {
        if n % i == 0 {
            return false;
        }
        i += 1;
    }
    true
}

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let n: i64 = input.trim().parse().unwrap();
    println!("{}", if is_prime(n) { "prime" } else { "composite" });
}
"#;

const PRIME_RS_HALF: &str = r#"use std::io::Read;

fn is_prime(n: i64) -> bool {
    if n < 2 {
        return false;
    }
    let mut i = 2;
    while i < n / 2 {
        if n % i == 0 {
            return false;
        }
        i += 1;
    }
    true
}

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let n: i64 = input.trim().parse().unwrap();
    println!("{}", if is_prime(n) { "prime" } else { "composite" });
}
"#;

const PTR_FIXED: &str = r#"#include <cstdio>

int main() {
    int a[16] = {0};
    int n = 0;
    scanf("%d", &n);
    for (int i = 0; i < n && i < 16; i++) {
        scanf("%d", a + i);
    }
    int total = 0;
    for (const int *p = a; p < a + n; p++) {
        total += *p;
    }
    printf("%d\n", total);
    return 0;
}
"#;

const PTR_BUGGY: &str = r#"#include <cstdio>

int main() {
    int a[16] = {0};
    int n = 0;
    scanf("%d", &n);
    for (int i = 0; i < n && i < 16; i++) {
        scanf("%d", a + i);
    }
    int total = 0;
    for (const int *p = a; p <= a + n; p++) {
        total += *p;
    }
    printf("%d\n", total);
    return 0;
}
"#;

const DIGITS_FIXED: &str = r#"#include <cstdio>

int main() {
    long long n = 0;
    scanf("%lld", &n);
    if (n < 0) {
        n = -n;
    }
    int sum = 0;
    while (n > 0) {
        sum += n % 10;
        n /= 10;
    }
    printf("%d\n", sum);
    return 0;
}
"#;

const DIGITS_BUGGY: &str = r#"#include <cstdio>

int main() {
    long long n = 0;
    scanf("%lld", &n);
    if (n < 0) {
        n = -n;
    }
    int sum = 0;
    while (n > 9) {
        sum += n % 10;
        n /= 10;
    }
    printf("%d\n", sum);
    return 0;
}
"#;

const DIGITS_RS_IMMUTABLE: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let n: i64 = input.trim().parse().unwrap();
    if n < 0 {
        n = -n;
    }
    let mut sum = 0;
    while n > 0 {
        sum += n % 10;
        n /= 10;
    }
    println!("{}", sum);
}
"#;

const DIGITS_RS_SIGNED: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let mut n: i64 = input.trim().parse().unwrap();
    let mut sum = 0;
    while n != 0 {
        sum += n % 10;
        n /= 10;
    }
    println!("{}", sum);
}
"#;

const DIGITS_RS_STRING: &str = r#"use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let sum: u32 = input.trim().chars().map(|c| c.to_digit(10).unwrap()).sum();
    println!("{}", sum);
}
"#;

pub const SEEDS: &[Seed] = &[
    Seed {
        name: "sum-bound",
        buggy: SUM_BUGGY,
        fixed: SUM_FIXED,
        defect_type: "Off-by-one loop bound",
        root_cause: "The loop stops at n - 1, so the last element is never read or added.",
        transferable: true,
        rationale: "Loop bounds exist in Rust ranges; an exclusive range that stops one early reproduces it.",
        tests: &["3\n1 2 3\n", "0\n", "4\n5 -2 7 0\n", "1\n9\n", "2\n4 0\n"],
        translations: &[Reply::Code(SUM_RS_BROKEN), Reply::Code(SUM_RS_FIXED)],
        trigger_condition: "n is at least 1 and the last element is non-zero",
        expected_failure: "wrong output: the last element is missing from the sum",
        trigger_inputs: &["5\n1 1 1 1 1\n", "2\n0 8\n", "1\n0\n"],
        candidates: &[Reply::Code(SUM_RS_FIXED), Reply::Code(SUM_RS_BUGGY), Reply::Code(SUM_RS_OVERSHOOT)],
    },
    Seed {
        name: "max-init",
        buggy: MAX_BUGGY,
        fixed: MAX_FIXED,
        defect_type: "Wrong initial value",
        root_cause: "The running maximum starts at 0 instead of the first element, so all-negative inputs report 0.",
        transferable: true,
        rationale: "A mutable accumulator initialised to zero behaves the same way in Rust.",
        tests: &["3\n1 5 2\n", "2\n-3 -1\n", "1\n-7\n", "4\n2 9 9 4\n", "0\n"],
        translations: &[Reply::Code(MAX_RS_FIXED)],
        trigger_condition: "every element is negative",
        expected_failure: "wrong output: prints 0 instead of the largest element",
        trigger_inputs: &["3\n-5 -2 -9\n", "1\n-1\n"],
        candidates: &[Reply::Code(MAX_RS_BUGGY), Reply::Code(MAX_RS_MIN_SEED), Reply::Code(MAX_RS_GE)],
    },
    Seed {
        name: "prime-square",
        buggy: PRIME_BUGGY,
        fixed: PRIME_FIXED,
        defect_type: "Off-by-one comparison",
        root_cause: "The trial-division loop uses i * i < n, so it never tests the square root of a perfect square.",
        transferable: true,
        rationale: "The comparison is language independent.",
        tests: &["1\n", "2\n", "7\n", "8\n", "9\n", "13\n", "25\n"],
        translations: &[
            Reply::Prose("The Rust version is straightforward: loop while i * i <= n and return early on a divisor."),
            Reply::Code(PRIME_RS_BOOL),
            Reply::Code(PRIME_RS_FIXED),
        ],
        trigger_condition: "n is the square of a prime",
        expected_failure: "wrong output: a perfect square is reported as prime",
        trigger_inputs: &["49\n", "121\n", "4\n"],
        candidates: &[
            Reply::Prose("I would change the loop condition to a strict comparison."),
            Reply::Code(PRIME_RS_BUGGY),
            Reply::Code(PRIME_RS_HALF),
        ],
    },
    Seed {
        name: "pointer-end",
        buggy: PTR_BUGGY,
        fixed: PTR_FIXED,
        defect_type: "Pointer past the end",
        root_cause: "The loop compares p <= a + n and dereferences one element past the data.",
        transferable: false,
        rationale: "Safe Rust has no pointer arithmetic on arrays; the out-of-range read would be a bounds-check panic, not the same silent defect.",
        tests: &[],
        translations: &[],
        trigger_condition: "",
        expected_failure: "",
        trigger_inputs: &[],
        candidates: &[],
    },
    Seed {
        name: "digit-sum",
        buggy: DIGITS_BUGGY,
        fixed: DIGITS_FIXED,
        defect_type: "Loop condition drops leading digit",
        root_cause: "The loop runs while n > 9, so the most significant digit is never added.",
        transferable: true,
        rationale: "Integer loops behave the same in Rust.",
        tests: &["123\n", "-45\n", "0\n", "9\n", "1000\n"],
        translations: &[
            Reply::Code(DIGITS_RS_IMMUTABLE),
            Reply::Code(DIGITS_RS_SIGNED),
            Reply::Code(DIGITS_RS_STRING),
        ],
        trigger_condition: "",
        expected_failure: "",
        trigger_inputs: &[],
        candidates: &[],
    },
];

pub fn seed_for(r: &CompletionRequest) -> Option<&'static Seed> {
    let b = &r.bindings;
    SEEDS.iter().find(|s| {
        b.get("fixed").is_some_and(|f| f == s.fixed)
            || b.get("fixed_src").is_some_and(|f| f == s.fixed)
            || b.get("defect_type").is_some_and(|d| d == s.defect_type)
    })
}

fn fenced_json(v: serde_json::Value) -> String {
    format!("```json\n{}\n```\n", serde_json::to_string_pretty(&v).unwrap())
}

fn reply_text(r: Option<&Reply>) -> Option<String> {
    Some(match r? {
        Reply::Code(c) => format!("Here is the program.\n\n```rust\n{c}```\n"),
        Reply::Prose(p) => p.to_string(),
    })
}

/// Answers a pipeline prompt for one of the seeds, or `None` when the
/// request does not belong to the fixture.
pub fn respond(r: &CompletionRequest) -> Option<String> {
    let s = seed_for(r)?;
    let i = r.sample_index as usize;
    match r.template_id.as_str() {
        "descriptor" => Some(fenced_json(json!({"defect_type": s.defect_type, "root_cause": s.root_cause}))),
        "transferability" => Some(fenced_json(json!({"transferable": s.transferable, "rationale": s.rationale}))),
        "test_inputs" => Some(fenced_json(json!({"inputs": s.tests}))),
        "translate" => reply_text(s.translations.get(i.checked_sub(1)?)),
        "behavior" => Some(fenced_json(
            json!({"trigger_condition": s.trigger_condition, "expected_failure": s.expected_failure}),
        )),
        "trigger_inputs" => Some(fenced_json(json!({"inputs": s.trigger_inputs}))),
        "inject" => reply_text(s.candidates.get(i.checked_sub(1)?)),
        _ => None,
    }
}

pub fn pairs_jsonl() -> String {
    SEEDS
        .iter()
        .map(|s| json!({"id": s.name, "lang": "cpp", "buggy": s.buggy, "fixed": s.fixed}).to_string() + "\n")
        .collect()
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cpp2rust")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_bugbridge"))
}
