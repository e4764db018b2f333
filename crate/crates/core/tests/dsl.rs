use kogun::fuzzy::MembershipFunction;
use kogun::ruledsl::{parse_rulebase, parse_rulebase_bytes, serialize_rulebase, ActionDecls, Conclusion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mf_source(mf: MembershipFunction) -> String {
    match mf {
        MembershipFunction::Linear { a, b } => format!("linear({a}, {b})"),
        MembershipFunction::Triangle { left, peak, right } => format!("tri({left}, {peak}, {right})"),
        MembershipFunction::Trapezoid {
            left_foot,
            left_shoulder,
            right_shoulder,
            right_foot,
        } => format!("trap({left_foot}, {left_shoulder}, {right_shoulder}, {right_foot})"),
    }
}

fn arb_mf() -> impl Strategy<Value = MembershipFunction> {
    prop_oneof![
        (-10.0f64..10.0, -5.0f64..5.0).prop_map(|(a, b)| MembershipFunction::Linear { a, b }),
        prop::array::uniform3(-50.0f64..50.0).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            MembershipFunction::Triangle {
                left: v[0],
                peak: v[1],
                right: v[2],
            }
        }),
        prop::array::uniform4(-50.0f64..50.0).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            MembershipFunction::Trapezoid {
                left_foot: v[0],
                left_shoulder: v[1],
                right_shoulder: v[2],
                right_foot: v[3],
            }
        }),
    ]
}

#[derive(Debug, Clone)]
struct Spec {
    vars: Vec<(usize, bool, Vec<MembershipFunction>)>,
    actions: usize,
    continuous: bool,
    rules: Vec<(Vec<(usize, usize)>, usize)>,
    comments: bool,
}

fn arb_spec() -> impl Strategy<Value = Spec> {
    let var = (0usize..8, any::<bool>(), prop::collection::vec(arb_mf(), 1..4));
    (prop::collection::vec(var, 1..5), 1usize..4, any::<bool>(), any::<bool>(), any::<u64>()).prop_map(
        |(vars, actions, continuous, comments, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_rules = rng.gen_range(0..6);
            let rules = (0..n_rules)
                .map(|_| {
                    let mut idx: Vec<usize> = (0..vars.len()).collect();
                    let k = rng.gen_range(1..=vars.len());
                    for i in 0..k {
                        let j = rng.gen_range(i..idx.len());
                        idx.swap(i, j);
                    }
                    let pre = idx[..k].iter().map(|&v| (v, rng.gen_range(0..vars[v].2.len()))).collect();
                    (pre, rng.gen_range(0..actions))
                })
                .collect();
            Spec {
                vars,
                actions,
                continuous,
                rules,
                comments,
            }
        },
    )
}

fn render(spec: &Spec) -> String {
    let mut s = String::new();
    if spec.comments {
        s.push_str("# generated\n\n");
    }
    for (i, (index, deg, _)) in spec.vars.iter().enumerate() {
        s.push_str(&format!("var V{i} = state[{index}]{}\n", if *deg { " deg" } else { "" }));
    }
    for (i, (_, _, sets)) in spec.vars.iter().enumerate() {
        for (j, mf) in sets.iter().enumerate() {
            s.push_str(&format!("set S{j} on V{i} = {}\n", mf_source(*mf)));
        }
        if spec.comments {
            s.push('\n');
        }
    }
    for a in 0..spec.actions {
        if spec.continuous {
            s.push_str(&format!("dim D{a} conclude Up\nset Up on D{a} = linear(0.1, 0)\n"));
        } else {
            s.push_str(&format!("action a{a}\n"));
        }
    }
    for (pre, target) in &spec.rules {
        let p: Vec<String> = pre.iter().map(|(v, set)| format!("V{v} is S{set}")).collect();
        let then = if spec.continuous {
            format!("D{target}")
        } else {
            format!("a{target}")
        };
        s.push_str(&format!("rule: if {} then {then}\n", p.join(" and ")));
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_valid_bases_round_trip(spec in arb_spec()) {
        let text = render(&spec);
        let rb = parse_rulebase(&text).map_err(|d| TestCaseError::fail(format!("{d}\n{text}")))?;
        prop_assert_eq!(rb.rules.len(), spec.rules.len());
        prop_assert_eq!(rb.is_continuous(), spec.continuous);
        let canonical = serialize_rulebase(&rb);
        let again = parse_rulebase(&canonical).map_err(|d| TestCaseError::fail(format!("{d}\n{canonical}")))?;
        prop_assert_eq!(&again, &rb);
        prop_assert_eq!(serialize_rulebase(&again), canonical);
    }

    #[test]
    fn mutated_sources_never_panic(spec in arb_spec(), cut in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let mut bytes = render(&spec).into_bytes();
        if !bytes.is_empty() {
            let i = cut.index(bytes.len());
            bytes[i] = byte;
            bytes.truncate(bytes.len() - i / 3);
        }
        let _ = parse_rulebase_bytes(&bytes);
    }
}

#[test]
fn bundled_bases_round_trip() {
    for rb in [kogun::rules::cartpole(), kogun::rules::cartpole_continuous()] {
        let text = serialize_rulebase(&rb);
        assert_eq!(parse_rulebase(&text).unwrap(), rb);
    }
}

#[test]
fn bundled_cartpole_structure() {
    let rb = kogun::rules::cartpole();
    assert_eq!(rb.actions, ActionDecls::Discrete(vec!["p".into(), "n".into()]));
    let ks: Vec<usize> = rb.rules.iter().map(|r| r.k()).collect();
    assert_eq!(ks, vec![2, 2, 2, 2, 4, 4]);
    let targets: Vec<&str> = rb
        .rules
        .iter()
        .map(|r| match &r.conclusion {
            Conclusion::Action(a) => a.as_str(),
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert_eq!(targets, vec!["n", "p", "n", "p", "p", "n"]);
}

#[test]
fn random_bytes_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let alphabet = b"var set rule action dim conclude if then is and state[0] deg linear tri trap ( ) , = : # \n -1.5e3 NE PO SM";
    let mut accepted = 0;
    for i in 0..100_000 {
        let len = rng.gen_range(0..96);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.gen()).collect()
        } else {
            (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
        };
        match parse_rulebase_bytes(&bytes) {
            Ok(_) => accepted += 1,
            Err(d) => assert!(!d.is_empty()),
        }
    }
    // Empty and comment-only inputs are valid documents.
    assert!(accepted > 0);
}
