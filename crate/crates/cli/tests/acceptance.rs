//! Acceptance suite. Runs every criterion against the built `rasterflow`
//! binary, prints one PASS/FAIL line each and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rasterflow::filters::{CheckerboardSource, ConstantSource, GlcmFeature, GlcmTexture, RandomSource};
use rasterflow::tiff::{read_raster, TiffReader};
use rasterflow::{
    assign_splits, auto_split_count, striped_split, tiled_split, ExecContext, ImageInfo, PixelBuffer, ProcessObject,
    Region, SampleType,
};
use rasterflow_cli::bench::BenchReport;
use rasterflow_cli::launch::read_statistics_csv;

type Outcome = Result<String, String>;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rasterflow"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`rasterflow {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn run_config(config: &Path, world: usize, split: &str, transport: &str, out: &Path) -> Result<(), String> {
    run_cli(&[
        "run",
        &config.display().to_string(),
        "--world",
        &world.to_string(),
        "--split",
        split,
        "--transport",
        transport,
        "--output",
        &out.display().to_string(),
    ])
    .map(|_| ())
}

fn read_bytes(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn pixels(p: &Path) -> Result<PixelBuffer, String> {
    read_raster(p).map(|(_, b)| b).map_err(|e| e.to_string())
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

const ANALOGUES: [(&str, &str); 6] = [
    ("P1", "ortho"),
    ("P2", "texture"),
    ("P3", "pansharpen"),
    ("P4", "classify"),
    ("P5", "meanshift"),
    ("P7", "superimpose"),
];

/// Outputs for worlds {1,2,4} x splits {1,4,16}. At a fixed split count
/// the whole files must match; across split counts the strip layout in the
/// header differs by construction, so the decoded pixels must match.
fn ac1() -> Outcome {
    let start = Instant::now();
    let dir = tmp();
    for (label, name) in ANALOGUES {
        let config = configs().join(format!("{name}.toml"));
        let mut reference_pixels: Option<PixelBuffer> = None;
        for splits in [1, 4, 16] {
            let split = format!("striped:{splits}");
            let base = dir.path().join(format!("{name}-s{splits}-w1.tif"));
            run_config(&config, 1, &split, "inproc", &base)?;
            let base_bytes = read_bytes(&base)?;
            for (world, transport) in [(2, "inproc"), (4, "proc")] {
                let out = dir.path().join(format!("{name}-s{splits}-w{world}.tif"));
                run_config(&config, world, &split, transport, &out)?;
                check(read_bytes(&out)? == base_bytes, || {
                    format!("{label} {name}: world {world} differs from world 1 at {splits} splits")
                })?;
                std::fs::remove_file(&out).ok();
            }
            let px = pixels(&base)?;
            match &reference_pixels {
                None => reference_pixels = Some(px),
                Some(r) => check(&px == r, || format!("{label} {name}: pixels at {splits} splits differ from 1 split"))?,
            }
            std::fs::remove_file(&base).ok();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1} s, limit 60 s"))?;
    Ok(format!("6 pipelines x worlds {{1,2,4}} x splits {{1,4,16}} identical in {secs:.1} s"))
}

fn ac2() -> Outcome {
    let dir = tmp();
    let config = configs().join("pansharpen.toml");
    let one = dir.path().join("one.tif");
    let four = dir.path().join("four.tif");
    run_config(&config, 1, "striped:16", "inproc", &one)?;
    run_config(&config, 4, "striped:16", "proc", &four)?;
    let (a, b) = (read_bytes(&one)?, read_bytes(&four)?);
    check(a == b, || {
        let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        format!("4-process file differs from world-1 file at byte {at}")
    })?;

    let file = std::fs::File::open(&four).map_err(|e| e.to_string())?;
    let mut decoder = tiff::decoder::Decoder::new(file).map_err(|e| e.to_string())?;
    let dims = decoder.dimensions().map_err(|e| e.to_string())?;
    check(dims == (1024, 1024), || format!("independent reader sees {dims:?}"))?;
    let color = decoder.colortype().map_err(|e| e.to_string())?;
    check(
        color == tiff::ColorType::Multiband { bit_depth: 16, num_samples: 4 },
        || format!("independent reader sees {color:?}"),
    )?;
    let decoded = match decoder.read_image().map_err(|e| e.to_string())? {
        tiff::decoder::DecodingResult::U16(v) => v,
        _ => return Err("independent reader decoded a non-u16 image".into()),
    };
    let ours = pixels(&four)?;
    check(
        decoded.iter().map(|&v| v as f64).eq(ours.to_f64()),
        || "independent reader decodes different samples".into(),
    )?;
    Ok(format!("{} bytes identical; independent reader: 1024x1024, 4 x u16", a.len()))
}

/// Exact single-pass oracle: every sample is an exact rational.
fn oracle_stats(img: &PixelBuffer, band: usize) -> (u64, BigRational, BigRational, f64, f64) {
    let bands = img.bands();
    let mut n = 0u64;
    let mut sum = BigRational::zero();
    let mut sum_sq = BigRational::zero();
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in img.to_f64().into_iter().skip(band).step_by(bands) {
        let r = BigRational::from_float(v).expect("finite sample");
        sum_sq += &r * &r;
        sum += r;
        n += 1;
        min = min.min(v);
        max = max.max(v);
    }
    let count = BigRational::from_integer(BigInt::from(n));
    let mean = &sum / &count;
    let variance = &sum_sq / &count - &mean * &mean;
    (n, mean, variance, min, max)
}

fn ac3() -> Outcome {
    let dir = tmp();
    let mut checked = 0;
    for (st, seed) in [(SampleType::U8, 31), (SampleType::U16, 32), (SampleType::F32, 33)] {
        let info = ImageInfo::new(256, 256, 4, st);
        let img = RandomSource::new(info, seed)
            .and_then(|s| s.generate(info.largest_region(), &info, &[], &ExecContext::default()))
            .map_err(|e| e.to_string())?;
        let config = dir.path().join(format!("stats-{}.toml", st.name()));
        std::fs::write(
            &config,
            format!(
                "[[node]]\nname = \"src\"\nkind = \"random\"\nwidth = 256\nheight = 256\nbands = 4\nsample_type = \"{}\"\nseed = {seed}\n\n[[node]]\nname = \"stats\"\nkind = \"statistics\"\ninputs = [\"src\"]\n",
                st.name()
            ),
        )
        .map_err(|e| e.to_string())?;
        let oracle: Vec<_> = (0..4).map(|b| oracle_stats(&img, b)).collect();
        for (world, transport) in [(1, "inproc"), (2, "proc"), (4, "proc")] {
            let csv = dir.path().join(format!("stats-{}-{world}.csv", st.name()));
            run_config(&config, world, "striped:16", transport, &csv)?;
            let got = read_statistics_csv(&csv).map_err(|e| e.to_string())?;
            for (b, (n, mean, var, min, max)) in oracle.iter().enumerate() {
                let g = &got[b];
                let what = format!("{} band {b} world {world}", st.name());
                check(g.count == *n && g.min == *min && g.max == *max, || format!("{what}: count/min/max {g:?}"))?;
                let (m, v) = (mean.to_f64().unwrap(), var.to_f64().unwrap());
                if st.is_integer() {
                    check(g.mean == m && g.variance == v, || {
                        format!("{what}: mean {} vs {m}, variance {} vs {v} (exact)", g.mean, g.variance)
                    })?;
                } else {
                    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
                    check(rel(g.mean, m) <= 1e-9 && rel(g.variance, v) <= 1e-9, || {
                        format!("{what}: mean {} vs {m}, variance {} vs {v}", g.mean, g.variance)
                    })?;
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} band/world/type combinations match the exact oracle"))
}

fn ac4() -> Outcome {
    let dir = tmp();
    let (w, h, bands, radius) = (64usize, 64usize, 3usize, 3i64);
    let config = dir.path().join("seam.toml");
    std::fs::write(
        &config,
        "[[node]]\nname = \"src\"\nkind = \"random\"\nwidth = 64\nheight = 64\nbands = 3\nsample_type = \"u16\"\nseed = 41\n\n[[node]]\nname = \"smooth\"\nkind = \"smooth\"\ninputs = [\"src\"]\nradius = 3\n\n[[node]]\nname = \"out\"\nkind = \"write\"\ninputs = [\"smooth\"]\npath = \"seam.tif\"\n",
    )
    .map_err(|e| e.to_string())?;
    let out = dir.path().join("seam.tif");
    // 13 stripes of a 64-row image are 5 rows high (the last one 4)
    run_config(&config, 3, "striped:13", "inproc", &out)?;
    let rows = TiffReader::open(&out).map_err(|e| e.to_string())?.layout().rows_per_strip;
    check(rows == 5, || format!("stripes are {rows} rows high, expected 5"))?;
    let got = pixels(&out)?;

    let info = ImageInfo::new(w, h, bands, SampleType::U16);
    let src = RandomSource::new(info, 41).map_err(|e| e.to_string())?;
    let d = (2 * radius + 1) * (2 * radius + 1);
    let mut mismatches = 0;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for b in 0..bands {
                let mut sum = 0i64;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                        let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                        sum += src.value_at(sx, sy, b) as i64;
                    }
                }
                // odd divisor: no ties, plain round to nearest
                let expected = (2 * sum + d) / (2 * d);
                if got.get(x as usize, y as usize, b).unwrap() != expected as f64 {
                    mismatches += 1;
                }
            }
        }
    }
    check(mismatches == 0, || format!("{mismatches} samples differ from the direct convolution"))?;
    Ok(format!("{} samples equal the direct convolution, 5-row stripes", w * h * bands))
}

fn bench_report(dir: &Path) -> Result<(BenchReport, f64), String> {
    let out = dir.join("report.csv");
    let start = Instant::now();
    run_cli(&[
        "bench",
        &configs().join("glcm_large.toml").display().to_string(),
        "--worlds",
        "1,2,4",
        "--reps",
        "5",
        "--transport",
        "proc",
        "--out",
        &out.display().to_string(),
    ])?;
    let text = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let report = BenchReport::from_csv(&text).map_err(|e| e.to_string())?;
    Ok((report, start.elapsed().as_secs_f64()))
}

fn ac5(report: &Result<(BenchReport, f64), String>) -> Outcome {
    let (report, secs) = report.as_ref().map_err(Clone::clone)?;
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let speedup = |n| report.row("glcm_large", n).and_then(|r| r.speedup);
    let (s1, s2, s4) = (speedup(1), speedup(2), speedup(4));
    let summary = format!(
        "speedups N=1: {s1:?}, N=2: {s2:?}, N=4: {s4:?}; {threads} hardware threads; {secs:.0} s"
    );
    let (Some(s1), Some(s2), Some(s4)) = (s1, s2, s4) else {
        return Err(format!("missing cells: {summary}"));
    };
    check(threads >= 4, || format!("host has fewer than 4 hardware threads; {summary}"))?;
    check(s4 >= 2.5, || format!("speedup at N=4 below 2.5; {summary}"))?;
    check(s1 < s2 && s2 < s4, || format!("speedup not monotone; {summary}"))?;
    check(*secs <= 600.0, || format!("over 10 minutes; {summary}"))?;
    Ok(summary)
}

fn ac6(report: &Result<(BenchReport, f64), String>) -> Outcome {
    let (report, _) = report.as_ref().map_err(Clone::clone)?;
    let row = report.row("io", 4).ok_or("no io row at N=4")?;
    let speedup = row.speedup.ok_or("io row at N=4 has no measurement")?;
    Ok(format!("io N=4 speedup {speedup:.3} recorded"))
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let run = |name: &str, f: &mut dyn FnMut(&mut TestRunner) -> Result<(), String>| {
        let mut runner = TestRunner::new(Config {
            cases: 1000,
            failure_persistence: None,
            ..Config::default()
        });
        f(&mut runner).map_err(|e| format!("{name}: {e}"))
    };
    let tiles_exactly = |splits: &[Region], info: &ImageInfo| -> Result<(), TestCaseError> {
        let whole = info.largest_region();
        prop_assert_eq!(splits.iter().map(Region::area).sum::<usize>(), whole.area());
        for (i, a) in splits.iter().enumerate() {
            prop_assert!(!a.is_empty() && whole.contains(a));
            for b in &splits[i + 1..] {
                prop_assert!(a.intersect(b).is_empty());
            }
        }
        Ok(())
    };
    run("striped coverage", &mut |r| {
        r.run(&(1usize..300, 1usize..300, 1usize..400), |(w, h, n)| {
            let info = ImageInfo::new(w, h, 1, SampleType::U8);
            tiles_exactly(striped_split(&info, n).splits(), &info)
        })
        .map_err(|e| e.to_string())
    })?;
    run("tiled coverage", &mut |r| {
        r.run(&(1usize..300, 1usize..300, 1usize..80, 1usize..80), |(w, h, tw, th)| {
            let info = ImageInfo::new(w, h, 1, SampleType::U8);
            tiles_exactly(tiled_split(&info, tw, th).splits(), &info)
        })
        .map_err(|e| e.to_string())
    })?;
    run("schedule fairness", &mut |r| {
        r.run(&(0usize..5000, 1usize..64), |(n, world)| {
            let s = assign_splits(n, world);
            let counts: Vec<usize> = (0..world).map(|k| s.splits_for(k).len()).collect();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    run("auto split multiples", &mut |r| {
        r.run(&(1usize..5000, 1usize..5000, 1usize..5, 1u64..(1 << 28), 1usize..33), |(w, h, b, budget, world)| {
            let info = ImageInfo::new(w, h, b, SampleType::U16);
            match auto_split_count(&info, budget, world) {
                // a multiple of world unless clamped to one stripe per row
                Ok(n) => prop_assert!(n >= 1 && n <= h && (n % world == 0 || n == h)),
                Err(_) => prop_assert!(budget < info.row_bytes()),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s, limit 30 s"))?;
    Ok(format!("4 properties x 1000 cases in {secs:.2} s"))
}

fn ac8() -> Outcome {
    let glcm = |levels, range| {
        GlcmTexture::new(2, levels, (1, 0), vec![GlcmFeature::Energy, GlcmFeature::Contrast], range)
            .map_err(|e| e.to_string())
    };
    let info = ImageInfo::new(16, 12, 1, SampleType::U8);
    let run = |f: &GlcmTexture, src: &dyn ProcessObject| -> Result<Vec<f64>, String> {
        let input = src
            .generate(info.largest_region(), &info, &[], &ExecContext::default())
            .map_err(|e| e.to_string())?;
        let out_info = f.output_information(&[info]).map_err(|e| e.to_string())?;
        let out = f
            .generate(out_info.largest_region(), &out_info, &[&input], &ExecContext::default())
            .map_err(|e| e.to_string())?;
        Ok(out.to_f64())
    };
    let constant = run(&glcm(8, (0.0, 255.0))?, &ConstantSource::new(info, 77.0).map_err(|e| e.to_string())?)?;
    check(constant.chunks(2).all(|p| p == [1.0, 0.0]), || "constant window is not energy 1 / contrast 0".into())?;
    let board = CheckerboardSource::new(info, 1, 0.0, 255.0).map_err(|e| e.to_string())?;
    let checker = run(&glcm(2, (0.0, 255.0))?, &board)?;
    check(checker.chunks(2).all(|p| p == [0.5, 1.0]), || "checkerboard is not energy 0.5 / contrast 1".into())?;
    Ok(format!("{} pixels exact for both closed forms", info.largest_region().area()))
}

fn main() {
    // libtest arguments (filters, --nocapture, ...) do not apply here
    let started = Instant::now();
    let bench_dir = tmp();
    let mut results: Vec<(&str, &str, Outcome)> = vec![
        ("AC1", "split invariance", ac1()),
        ("AC2", "parallel writer", ac2()),
        ("AC3", "distributed statistics", ac3()),
        ("AC4", "smoothing seams", ac4()),
    ];
    let report = bench_report(bench_dir.path());
    results.push(("AC5", "scaling", ac5(&report)));
    results.push(("AC6", "I/O row", ac6(&report)));
    results.push(("AC7", "splitting properties", ac7()));
    results.push(("AC8", "GLCM closed forms", ac8()));

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {name}: {detail}");
            }
        }
    }
    if let Ok((report, _)) = &report {
        println!("bench report:\n{}", report.to_csv().unwrap_or_default().trim_end());
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
