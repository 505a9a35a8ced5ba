//! Generators for arbitrary dictionary files.

use foampilot::foam::{DimensionSet, Dimensioned, FoamDict, FoamFile, FoamNode, Scalar};
use proptest::prelude::*;

pub fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z0-9_]{0,18}".prop_filter("reserved", |s| s != "FoamFile")
}

fn word() -> impl Strategy<Value = FoamNode> {
    prop_oneof![
        "[a-zA-Z][a-zA-Z0-9_.]{0,12}".prop_map(|w| FoamNode::word(&w)),
        "[a-z]{1,6}\\([a-zA-Z]{1,4},[a-zA-Z]{1,4}\\)".prop_map(|w| FoamNode::word(&w)),
        "\\$[a-zA-Z][a-zA-Z0-9]{0,8}".prop_map(|w| FoamNode::word(&w)),
    ]
}

fn number() -> impl Strategy<Value = FoamNode> {
    prop_oneof![
        (-1.0e6f64..1.0e6).prop_map(FoamNode::number),
        (-1000i64..1000).prop_map(|i| FoamNode::number(i as f64)),
        (1u32..12).prop_map(|e| FoamNode::number(10f64.powi(-(e as i32)))),
    ]
}

fn scalar() -> impl Strategy<Value = FoamNode> {
    prop_oneof![
        4 => word(),
        4 => number(),
        1 => "[a-zA-Z0-9 _./-]{0,16}".prop_map(|s| FoamNode::quoted(&s)),
    ]
}

fn dims() -> impl Strategy<Value = DimensionSet> {
    proptest::array::uniform7(-3i32..4).prop_map(DimensionSet)
}

fn list() -> impl Strategy<Value = FoamNode> {
    let leaf = prop_oneof![scalar(), prop::collection::vec(number(), 3).prop_map(FoamNode::List)];
    prop_oneof![
        3 => prop::collection::vec(leaf, 0..14).prop_map(FoamNode::List),
        1 => prop::collection::vec(prop::collection::vec(number(), 3).prop_map(FoamNode::List), 0..14)
            .prop_map(FoamNode::List),
    ]
}

fn seq() -> impl Strategy<Value = FoamNode> {
    (word(), prop::collection::vec(prop_oneof![scalar(), list()], 1..4)).prop_map(|(head, rest)| {
        let mut items = vec![head];
        items.extend(rest);
        FoamNode::Seq(items)
    })
}

fn leaf_value() -> impl Strategy<Value = FoamNode> {
    prop_oneof![
        4 => scalar(),
        2 => list(),
        2 => seq(),
        1 => dims().prop_map(FoamNode::Dimensions),
        1 => (proptest::option::of(ident()), dims(), number()).prop_map(|(name, d, v)| {
            FoamNode::Dimensioned(Dimensioned {
                name,
                dimensions: d,
                value: v.as_scalar().cloned().unwrap_or_else(|| Scalar::number(0.0)),
            })
        }),
        1 => Just(FoamNode::Seq(vec![])),
    ]
}

fn dict(depth: u32) -> BoxedStrategy<FoamDict> {
    let value: BoxedStrategy<FoamNode> = if depth == 0 {
        leaf_value().boxed()
    } else {
        prop_oneof![
            5 => leaf_value(),
            1 => dict(depth - 1).prop_map(FoamNode::Dict),
            1 => prop::collection::vec(
                (ident(), dict(depth - 1)).prop_map(|(n, d)| FoamNode::Seq(vec![FoamNode::word(&n), FoamNode::Dict(d)])),
                0..4,
            )
            .prop_map(FoamNode::List),
        ]
        .boxed()
    };
    (
        prop::collection::vec((ident(), value), 0..8),
        prop::collection::vec("#include \"[a-z]{1,8}\"", 0..2),
    )
        .prop_map(|(entries, directives)| {
            let mut d = FoamDict::new();
            for line in directives {
                d.push_directive(line);
            }
            for (k, v) in entries {
                if !d.contains_key(&k) {
                    d.insert(k, v);
                }
            }
            d
        })
        .boxed()
}

pub fn foam_file() -> impl Strategy<Value = FoamFile> {
    (proptest::bool::ANY, ident(), dict(3)).prop_map(|(with_header, object, root)| {
        let mut f = if with_header {
            FoamFile::new("dictionary", &object)
        } else {
            FoamFile::default()
        };
        f.root = root;
        f
    })
}
