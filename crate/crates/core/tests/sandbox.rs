//! Real toolchains: g++, gcov and rustc must be on PATH.

use std::collections::BTreeMap;
use std::time::Duration;

use bugbridge_core::sandbox::{default_specs, FailureCategory, Sandbox, SyntaxCheck};
use bugbridge_core::LanguageId;

fn sandbox(timeout: Option<f64>) -> Sandbox {
    let mut profiles = BTreeMap::new();
    for (name, mut spec) in default_specs() {
        if let Some(t) = timeout {
            spec.run_timeout = t;
        }
        profiles.insert(LanguageId::new(name), spec.validate().unwrap());
    }
    Sandbox::new(profiles, 2, None).unwrap()
}

const BRANCHY: &str = r#"#include <cstdio>
int main() {
    int x = 0;
    scanf("%d", &x);
    if (x > 0) {
        printf("pos\n");
    } else {
        printf("non-pos\n");
    }
    return 0;
}
"#;

#[test]
fn one_sided_input_leaves_branches_uncovered() {
    let sb = sandbox(None);
    let one = sb.measure_coverage(&"cpp".into(), BRANCHY, &["5\n".into()]).unwrap();
    assert!(one.branch_pct <= 50.0, "{one:?}");
    assert!(one.line_pct < 100.0, "{one:?}");
    let both = sb
        .measure_coverage(&"cpp".into(), BRANCHY, &["5\n".into(), "-1\n".into()])
        .unwrap();
    assert_eq!(both.line_pct, 100.0);
    assert!(both.branch_pct > one.branch_pct);
}

#[test]
fn straight_line_program_is_fully_covered() {
    let sb = sandbox(None);
    let src = "#include <cstdio>\nint main() {\n    printf(\"hi\\n\");\n    return 0;\n}\n";
    let r = sb.measure_coverage(&"cpp".into(), src, &["\n".into()]).unwrap();
    assert_eq!((r.line_pct, r.branch_pct), (100.0, 100.0), "{r:?}");
}

#[test]
fn infinite_loop_times_out() {
    let sb = sandbox(Some(2.0));
    let src = "int main() { volatile int x = 0; for (;;) { x++; } }\n";
    let out = sb.execute(&"cpp".into(), src, "", None).unwrap();
    assert_eq!(out.category, FailureCategory::Timeout);
    assert!(Duration::from_millis(out.elapsed_ms) >= Duration::from_secs(2), "{out:?}");
}

#[test]
fn outcomes_are_classified() {
    let sb = sandbox(None);
    let cpp: LanguageId = "cpp".into();
    let echo = "#include <cstdio>\nint main() { int x; scanf(\"%d\", &x); printf(\"%d\\n\", x); }\n";
    assert_eq!(sb.execute(&cpp, echo, "4\n", Some("4\n")).unwrap().category, FailureCategory::Pass);
    assert_eq!(sb.execute(&cpp, echo, "4\n", Some("5\n")).unwrap().category, FailureCategory::WrongOutput);
    let segv = "int main() { volatile int *p = 0; return *p; }\n";
    assert_eq!(sb.execute(&cpp, segv, "", None).unwrap().category, FailureCategory::Crash);
    let panic = "fn main() { let v: Vec<i32> = Vec::new(); println!(\"{}\", v[3]); }\n";
    assert_eq!(sb.execute(&"rust".into(), panic, "", None).unwrap().category, FailureCategory::Exception);
    let bad = "fn main() { let x: i32 = \"no\"; }\n";
    assert!(matches!(sb.syntax_check(&"rust".into(), bad).unwrap(), SyntaxCheck::Invalid(_)));
    assert_eq!(sb.execute(&"rust".into(), bad, "", None).unwrap().category, FailureCategory::CompileError);
}
