use std::path::Path;

use rasterflow::SplitStrategy;
use rasterflow_cli::config::{GlcmRange, NodeSpec};
use rasterflow_cli::{load_config, parse_config};

const MINIMAL: &str = r#"
[[node]]
name = "read"
kind = "read"
path = "in.tif"

[[node]]
name = "write"
kind = "write"
inputs = ["read"]
path = "out.tif"
"#;

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

#[test]
fn minimal_read_write_has_two_nodes_and_one_edge() {
    let c = parse_config(MINIMAL).unwrap();
    assert_eq!(c.nodes.len(), 2);
    assert_eq!(c.edge_count(), 1);
    assert_eq!(c.mapper().name, "write");
    assert_eq!(c.world_size, 1);
    assert_eq!(c.split, SplitStrategy::default());
}

#[test]
fn shipped_pansharpening_config_has_six_nodes() {
    let c = load_config(&configs_dir().join("pansharpen.toml")).unwrap();
    assert_eq!(c.nodes.len(), 6);
    assert_eq!(c.node("fused").unwrap().inputs, ["pan", "xs_up", "pan_smooth"]);
    assert_eq!(c.split, SplitStrategy::Striped(16));
    assert!(c.output_path().unwrap().is_absolute());
}

#[test]
fn every_shipped_config_parses() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn unknown_kind_is_named() {
    let text = MINIMAL.replace("kind = \"read\"", "kind = \"sharpen\"");
    let e = parse_config(&text).unwrap_err();
    assert!(e.mentions("unknown kind 'sharpen'"), "{e}");
    assert!(e.mentions("node 'read'"), "{e}");
}

#[test]
fn cycle_names_its_nodes() {
    let text = r#"
[[node]]
name = "a"
kind = "smooth"
inputs = ["c"]
radius = 1

[[node]]
name = "b"
kind = "smooth"
inputs = ["a"]
radius = 1

[[node]]
name = "c"
kind = "smooth"
inputs = ["b"]
radius = 1

[[node]]
name = "out"
kind = "write"
inputs = ["c"]
path = "o.tif"
"#;
    let e = parse_config(text).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("cycle"), "{msg}");
    for n in ["a", "b", "c"] {
        assert!(msg.contains(&format!("{n} ->")) || msg.contains(&format!("-> {n}")), "{msg}");
    }
}

#[test]
fn mapper_count_must_be_one() {
    let no_mapper = r#"
[[node]]
name = "src"
kind = "constant"
width = 4
height = 4
value = 1
"#;
    assert!(parse_config(no_mapper).unwrap_err().mentions("missing mapper"));

    let two = format!(
        "{MINIMAL}\n[[node]]\nname = \"stats\"\nkind = \"statistics\"\ninputs = [\"read\"]\n"
    );
    let e = parse_config(&two).unwrap_err();
    assert!(e.mentions("exactly one mapper"), "{e}");
    assert!(e.mentions("write, stats"), "{e}");
}

#[test]
fn undefined_reference_is_reported() {
    let text = MINIMAL.replace("inputs = [\"read\"]", "inputs = [\"reader\"]");
    let e = parse_config(&text).unwrap_err();
    assert!(e.mentions("input 'reader' is not defined"), "{e}");
}

#[test]
fn schema_errors_are_collected_together() {
    let text = r#"
[[node]]
name = "src"
kind = "random"
width = 8
height = 8
seed = 1
colour = "blue"

[[node]]
name = "f"
kind = "pansharpen_rcs"
inputs = ["src"]

[[node]]
name = "out"
kind = "write"
inputs = ["f", "src"]
path = "o.tif"
"#;
    let e = parse_config(text).unwrap_err();
    assert!(e.mentions("colour"), "{e}");
    assert!(e.mentions("node 'f': takes 2 to 3 inputs, got 1"), "{e}");
    assert!(e.mentions("node 'out': takes 1 inputs, got 2"), "{e}");
}

#[test]
fn mapper_cannot_feed_another_node() {
    let text = format!("{MINIMAL}\n[[node]]\nname = \"s\"\nkind = \"smooth\"\ninputs = [\"write\"]\nradius = 1\n");
    assert!(parse_config(&text).unwrap_err().mentions("is a mapper"));
}

#[test]
fn split_and_params_are_typed() {
    let text = r#"
world_size = 3

[split]
strategy = "tiled"
width = 32
height = 16

[[node]]
name = "src"
kind = "random"
width = 64
height = 64
bands = 2
sample_type = "u16"
seed = 5

[[node]]
name = "t"
kind = "glcm_texture"
inputs = ["src"]
radius = 2
levels = 8
range = "auto"

[[node]]
name = "s"
kind = "statistics"
inputs = ["t"]
"#;
    let c = parse_config(text).unwrap();
    assert_eq!(c.world_size, 3);
    assert_eq!(c.split, SplitStrategy::Tiled { width: 32, height: 16 });
    match &c.node("t").unwrap().spec {
        NodeSpec::Glcm { range, offset, features, .. } => {
            assert_eq!(*range, GlcmRange::Auto);
            assert_eq!(*offset, (1, 0));
            assert_eq!(features.len(), 2);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(c.upstream_of("s"), ["src", "t", "s"]);
}

#[test]
fn bad_parameters_are_rejected_at_parse_time() {
    for (kind, params, needle) in [
        ("band_math", "expr = \"b0 +\"", "node 'f'"),
        ("resample", "scale = 0.0", "node 'f'"),
        ("glcm_texture", "radius = 1\nlevels = 1\nrange = [0, 1]", "levels"),
        ("meanshift_smooth", "spatial_radius = 1\nrange_radius = -1.0\nmax_iter = 2", "node 'f'"),
        ("classify_rule", "stumps = []", "node 'f'"),
    ] {
        let text = format!(
            "[[node]]\nname = \"src\"\nkind = \"constant\"\nwidth = 4\nheight = 4\nvalue = 1\n\n[[node]]\nname = \"f\"\nkind = \"{kind}\"\ninputs = [\"src\"]\n{params}\n\n[[node]]\nname = \"out\"\nkind = \"write\"\ninputs = [\"f\"]\npath = \"o.tif\"\n"
        );
        let e = parse_config(&text).unwrap_err();
        assert!(e.mentions(needle), "{kind}: {e}");
    }
}
