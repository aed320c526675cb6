//! End-to-end checks of the installed binary: every assertion runs the real
//! executable against real files and inspects exit codes, streams and bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exmy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exmy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_user_error(out: &Output, needle: &str) {
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "stderr missing '{needle}': {err}");
}

fn write_f32(path: &Path, values: &[f32]) {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).unwrap();
}

fn read_f32(path: &Path) -> Vec<f32> {
    fs::read(path)
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

#[test]
fn analyze_reports_exponent_counts_as_json() {
    let d = Dir::new();
    write_f32(&d.path("ones.bin"), &vec![1.0f32; 1024]);
    let out = exmy(&["analyze", &d.p("ones.bin")]);
    assert_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["histogram"]["bins"][127], 1024);
    assert_eq!(v["histogram"]["total"], 1024);
    assert_eq!(v["stats"]["lossless_exponent_bits"], 0);
}

#[test]
fn analyze_rejects_empty_input() {
    let d = Dir::new();
    fs::write(d.path("none.bin"), []).unwrap();
    let out = exmy(&["analyze", &d.p("none.bin")]);
    assert_user_error(&out, "empty tensor");
}

#[test]
fn analyze_recommends_four_exponent_bits_for_top_15_bins() {
    let d = Dir::new();
    let mut values = Vec::new();
    for b in 126u32..=140 {
        values.extend(std::iter::repeat_n(f32::from_bits(b << 23), 1000));
    }
    values.extend(std::iter::repeat_n(f32::from_bits(110u32 << 23), 10));
    write_f32(&d.path("skew.bin"), &values);
    let out = exmy(&["analyze", &d.p("skew.bin"), "--budget", "0.001"]);
    assert_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fmt = v["recommendations"][0]["format"].as_str().unwrap();
    assert!(fmt.starts_with("e4"), "recommended {fmt}");
}

#[test]
fn analyze_csv_and_text_reports_render() {
    let d = Dir::new();
    write_f32(&d.path("ones.bin"), &vec![1.0f32; 64]);
    let csv = exmy(&["analyze", &d.p("ones.bin"), "--report", "csv"]);
    assert_ok(&csv);
    let body = String::from_utf8(csv.stdout).unwrap();
    assert!(body.starts_with("bin,count\n"));
    assert!(body.contains("\n127,64\n"));

    let text = exmy(&["analyze", &d.p("ones.bin"), "--report", "text", "-o", &d.p("report.txt")]);
    assert_ok(&text);
    let report = fs::read_to_string(d.path("report.txt")).unwrap();
    assert!(report.contains("exponent fields 127..=127"));
}

#[test]
fn emulate_rounds_up_when_anchored_after_rounding() {
    let d = Dir::new();
    write_f32(&d.path("in.bin"), &[3.9f32; 8]);
    let out = exmy(&[
        "emulate", &d.p("in.bin"), "-o", &d.p("out.bin"),
        "--format", "e2m1", "--scheme", "max-after",
    ]);
    assert_ok(&out);
    assert_eq!(read_f32(&d.path("out.bin")), vec![4.0f32; 8]);
}

#[test]
fn emulate_widest_format_is_byte_identity() {
    let d = Dir::new();
    let patterns: [u32; 8] = [
        0x0000_0000, // +0
        0x8000_0000, // -0
        0x7FC0_1234, // NaN with payload
        0xFF80_0000, // -Inf
        0x0000_0001, // smallest subnormal
        0x3F80_0000, // 1.0
        0xC2F6_E979, // arbitrary negative
        0x7F7F_FFFF, // largest finite
    ];
    let values: Vec<f32> = patterns.iter().map(|b| f32::from_bits(*b)).collect();
    write_f32(&d.path("in.bin"), &values);
    let out = exmy(&["emulate", &d.p("in.bin"), "-o", &d.p("out.bin"), "--format", "e8m23"]);
    assert_ok(&out);
    assert_eq!(fs::read(d.path("out.bin")).unwrap(), fs::read(d.path("in.bin")).unwrap());
}

#[test]
fn emulate_twice_yields_identical_bytes() {
    let d = Dir::new();
    let values: Vec<f32> = (0..256).map(|i| (i as f32 - 128.0) * 0.37).collect();
    write_f32(&d.path("in.bin"), &values);
    let run = |src: &str, dst: &str| {
        let out = exmy(&["emulate", src, "-o", dst, "--format", "e3m2", "--scheme", "float-scale"]);
        assert_ok(&out);
    };
    run(&d.p("in.bin"), &d.p("once.bin"));
    run(&d.p("once.bin"), &d.p("twice.bin"));
    assert_eq!(
        fs::read(d.path("once.bin")).unwrap(),
        fs::read(d.path("twice.bin")).unwrap()
    );
}

#[test]
fn encode_payload_is_six_bits_per_element_plus_row_metadata() {
    let d = Dir::new();
    let n = 1024 * 4096;
    let values: Vec<f32> = (0..n).map(|i| ((i % 255) as f32 - 127.0) * 0.031).collect();
    write_f32(&d.path("big.bin"), &values);
    let out = exmy(&[
        "encode", &d.p("big.bin"), "-o", &d.p("big.exmy"),
        "--format", "e3m2", "--block", "row", "--shape", "1024,4096",
    ]);
    assert_ok(&out);
    let mut reader = exmy::open_file(&d.path("big.exmy")).unwrap();
    let packed = reader.read_tensor("tensor").unwrap();
    assert_eq!(packed.payload_bytes(), n * 6 / 8 + 1024);

    let info = exmy(&["info", &d.p("big.exmy")]);
    assert_ok(&info);
    let listing = String::from_utf8(info.stdout).unwrap();
    assert!(listing.contains("format=e3m2"));
    assert!(listing.contains("block=row"));
    assert!(listing.contains("dims=1024x4096"));
}

#[test]
fn decode_of_encode_matches_emulate_bytes() {
    let d = Dir::new();
    let values: Vec<f32> = (0..16 * 64)
        .map(|i| {
            let m = 1.0 + (i % 97) as f32 / 97.0;
            m * ((i % 29) as f32 - 14.0).exp2()
        })
        .collect();
    write_f32(&d.path("in.bin"), &values);
    let common = [
        "--format", "e4m3", "--scheme", "max-after",
        "--block", "subrow:32", "--shape", "16,64",
    ];
    let (src, packed, decoded, emulated) =
        (d.p("in.bin"), d.p("t.exmy"), d.p("decoded.bin"), d.p("emulated.bin"));

    let mut encode = vec!["encode", &src, "-o", &packed];
    encode.extend_from_slice(&common);
    assert_ok(&exmy(&encode));

    assert_ok(&exmy(&["decode", &packed, "-o", &decoded]));

    let mut emulate = vec!["emulate", &src, "-o", &emulated];
    emulate.extend_from_slice(&common);
    assert_ok(&exmy(&emulate));

    assert_eq!(
        fs::read(d.path("decoded.bin")).unwrap(),
        fs::read(d.path("emulated.bin")).unwrap()
    );
}

#[test]
fn decode_names_the_checksum_failure_on_corruption() {
    let d = Dir::new();
    let values: Vec<f32> = (0..8 * 32).map(|i| i as f32 * 0.125 - 16.0).collect();
    write_f32(&d.path("in.bin"), &values);
    assert_ok(&exmy(&[
        "encode", &d.p("in.bin"), "-o", &d.p("t.exmy"),
        "--format", "e4m3", "--shape", "8,32",
    ]));
    let mut bytes = fs::read(d.path("t.exmy")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xFF;
    fs::write(d.path("bad.exmy"), bytes).unwrap();
    let out = exmy(&["decode", &d.p("bad.exmy"), "-o", &d.p("out.bin")]);
    assert_user_error(&out, "ChecksumMismatch");
    assert!(!d.path("out.bin").exists(), "no output on failure");
}

#[test]
fn info_lists_entries_in_write_order() {
    let d = Dir::new();
    let make = |seed: f32| {
        let values: Vec<f32> = (0..8 * 16).map(|i| (i as f32 + seed) * 0.25).collect();
        let t = exmy::Tensor::new(vec![8, 16], values).unwrap();
        exmy::encode_tensor(
            &t,
            "e3m2".parse().unwrap(),
            exmy::BlockShape::PerRow,
            exmy::Scheme::MaxExpBeforeRounding,
        )
        .unwrap()
    };
    let (b, a) = (make(7.0), make(2.0));
    exmy::write_file(&d.path("two.exmy"), &[("zz.first", &b), ("aa.second", &a)]).unwrap();
    let out = exmy(&["info", &d.p("two.exmy")]);
    assert_ok(&out);
    let listing = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = listing.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("zz.first "));
    assert!(lines[1].starts_with("aa.second "));
    assert!(lines[0].contains("scheme=max-before"));
    assert!(lines[0].contains("ratio="));
}

#[test]
fn info_rejects_truncated_container() {
    let d = Dir::new();
    write_f32(&d.path("in.bin"), &[1.5f32; 64]);
    assert_ok(&exmy(&[
        "encode", &d.p("in.bin"), "-o", &d.p("t.exmy"),
        "--format", "e2m1", "--shape", "8,8",
    ]));
    let bytes = fs::read(d.path("t.exmy")).unwrap();
    fs::write(d.path("cut.exmy"), &bytes[..bytes.len() / 2]).unwrap();
    let out = exmy(&["info", &d.p("cut.exmy")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decode_requires_a_name_for_multi_tensor_containers() {
    let d = Dir::new();
    let t = exmy::Tensor::new(vec![8, 8], vec![1.0f32; 64]).unwrap();
    let p = exmy::encode_tensor(
        &t,
        "e2m1".parse().unwrap(),
        exmy::BlockShape::WholeTensor,
        exmy::Scheme::FloatScaling,
    )
    .unwrap();
    exmy::write_file(&d.path("two.exmy"), &[("a", &p), ("b", &p)]).unwrap();
    let out = exmy(&["decode", &d.p("two.exmy"), "-o", &d.p("out.bin")]);
    assert_user_error(&out, "--name");
    let out = exmy(&["decode", &d.p("two.exmy"), "-o", &d.p("out.bin"), "--name", "b"]);
    assert_ok(&out);
    assert_eq!(read_f32(&d.path("out.bin")), vec![1.0f32; 64]);
}

#[test]
fn bf16_input_widens_to_the_same_exponent_bins() {
    let d = Dir::new();
    let bytes: Vec<u8> = std::iter::repeat_n(0x3F80u16, 16)
        .flat_map(|h| h.to_le_bytes())
        .collect();
    fs::write(d.path("ones.bf16"), bytes).unwrap();
    let out = exmy(&["analyze", &d.p("ones.bf16"), "--dtype", "bf16"]);
    assert_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["histogram"]["bins"][127], 16);
}

#[test]
fn shape_flag_must_match_the_element_count() {
    let d = Dir::new();
    write_f32(&d.path("in.bin"), &[1.0f32; 8]);
    let out = exmy(&["analyze", &d.p("in.bin"), "--shape", "3,3"]);
    assert_user_error(&out, "shape");
}

#[test]
fn encode_of_a_flat_row_names_the_grouping_rule() {
    let d = Dir::new();
    write_f32(&d.path("in.bin"), &[1.0f32; 64]);
    let out = exmy(&["encode", &d.p("in.bin"), "-o", &d.p("t.exmy"), "--format", "e4m3"]);
    assert_user_error(&out, "RowsNotMultipleOf8");
}
