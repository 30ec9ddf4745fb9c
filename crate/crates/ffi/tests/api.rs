use std::ffi::{CStr, CString};
use std::ptr;

use dsg_ffi::*;

const TUPLES: &str = "1 | entity - whole (motorcycle)
2 | attribute - color (blue, motorcycle)
3 | entity - whole (doors)
4 | relation - spatial (parked by, motorcycle, doors)";
const QUESTIONS: &str = "1 | Is there a motorcycle?
2 | Is the motorcycle blue?
3 | Are there doors?
4 | Is the motorcycle parked by the doors?";
const DEPS: &str = "1 | 0\n2 | 1\n3 | 0\n4 | 1,3";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = dsg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn motorcycle() -> *mut DsgGraph {
    let (p, t, q, d) = (c("m"), c(TUPLES), c(QUESTIONS), c(DEPS));
    let mut g = ptr::null_mut();
    let s = unsafe { dsg_graph_from_annotations(p.as_ptr(), t.as_ptr(), q.as_ptr(), d.as_ptr(), false, &mut g) };
    assert_eq!(s, DsgStatus::Ok);
    g
}

#[test]
fn order_and_scores() {
    let g = motorcycle();
    unsafe {
        assert_eq!(dsg_graph_question_count(g), 4);
        let mut buf = [0u32; 4];
        let mut len = 4;
        assert_eq!(dsg_graph_topological_order(g, buf.as_mut_ptr(), &mut len), DsgStatus::Ok);
        assert_eq!(buf, [1, 2, 3, 4]);

        // no motorcycle: everything hanging off it scores 0
        let answers = [0u8, 1, 1, 1];
        for mode in [DsgScoreMode::Skip, DsgScoreMode::ZeroOut] {
            let mut scores = [9u8; 4];
            let mut avg = -1.0;
            let s = dsg_graph_evaluate(g, answers.as_ptr(), 4, mode, scores.as_mut_ptr(), &mut avg);
            assert_eq!(s, DsgStatus::Ok);
            assert_eq!(scores, [0, 0, 1, 0]);
            assert_eq!(avg, 0.25);
        }
        dsg_graph_free(g);
    }
}

#[test]
fn short_buffer_reports_required_length() {
    let g = motorcycle();
    unsafe {
        let mut buf = [0u32; 2];
        let mut len = 2;
        assert_eq!(
            dsg_graph_topological_order(g, buf.as_mut_ptr(), &mut len),
            DsgStatus::BufferTooSmall
        );
        assert_eq!(len, 4);
        assert_eq!(buf, [0, 0]);
        dsg_graph_free(g);
    }
}

#[test]
fn json_round_trip() {
    let g = motorcycle();
    unsafe {
        let mut json = ptr::null_mut();
        assert_eq!(dsg_graph_to_json(g, &mut json), DsgStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        assert!(text.contains("\"prompt_id\":\"m\""));

        let mut back = ptr::null_mut();
        assert_eq!(dsg_graph_from_json(json, &mut back), DsgStatus::Ok);
        dsg_string_free(json);
        let mut again = ptr::null_mut();
        assert_eq!(dsg_graph_to_json(back, &mut again), DsgStatus::Ok);
        assert_eq!(CStr::from_ptr(again).to_str().unwrap(), text);
        dsg_string_free(again);
        dsg_graph_free(back);
        dsg_graph_free(g);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let (p, t, q) = (c("x"), c("1 | entity - whole (a)\n2 | entity - whole (b)"), c("1 | a?\n2 | b?"));
    let cyclic = c("1 | 2\n2 | 1");
    let mut g = ptr::null_mut();
    unsafe {
        let s = dsg_graph_from_annotations(p.as_ptr(), t.as_ptr(), q.as_ptr(), cyclic.as_ptr(), false, &mut g);
        assert_eq!(s, DsgStatus::InvalidGraph);
        assert!(last_error().contains("cycle"), "{}", last_error());
        assert!(g.is_null());

        let bad = c("1 | entity - whole");
        let deps = c("1 | 0");
        let one = c("1 | a?");
        let s = dsg_graph_from_annotations(p.as_ptr(), bad.as_ptr(), one.as_ptr(), deps.as_ptr(), false, &mut g);
        assert_eq!(s, DsgStatus::Parse);

        assert_eq!(dsg_graph_from_json(c("{").as_ptr(), &mut g), DsgStatus::Parse);
        assert_eq!(dsg_graph_from_json(ptr::null(), &mut g), DsgStatus::NullPointer);

        let mut len = 0;
        assert_eq!(
            dsg_graph_topological_order(ptr::null(), ptr::null_mut(), &mut len),
            DsgStatus::NullPointer
        );
        assert_eq!(dsg_graph_question_count(ptr::null()), 0);

        let g = motorcycle();
        let (mut scores, mut avg) = ([0u8; 3], 0.0);
        let s = dsg_graph_evaluate(g, [1u8; 3].as_ptr(), 3, DsgScoreMode::Skip, scores.as_mut_ptr(), &mut avg);
        assert_eq!(s, DsgStatus::InvalidArgument);
        dsg_graph_free(g);

        // a successful call clears the message
        assert!(!last_error().is_empty());
        let g = motorcycle();
        assert!(dsg_last_error().is_null());
        dsg_graph_free(g);
        dsg_graph_free(ptr::null_mut());
        dsg_string_free(ptr::null_mut());
    }
}

#[test]
fn rank_statistics() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [2.0, 1.0, 4.0, 3.0, 5.0];
    let (mut rho, mut tau) = (0.0, 0.0);
    unsafe {
        assert_eq!(dsg_spearman(x.as_ptr(), y.as_ptr(), 5, &mut rho), DsgStatus::Ok);
        assert_eq!(dsg_kendall(x.as_ptr(), y.as_ptr(), 5, &mut tau), DsgStatus::Ok);
        // d = (1, 1, 1, 1, 0): 1 - 6 * 4 / 120; two discordant pairs of ten
        assert!((rho - 0.8).abs() < 1e-12);
        assert!((tau - 0.6).abs() < 1e-12);

        let flat = [3.0; 5];
        assert_eq!(dsg_spearman(x.as_ptr(), flat.as_ptr(), 5, &mut rho), DsgStatus::Undefined);
    }
}

#[test]
fn header_declares_every_export() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/dsg.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let mut exported = 0;
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from dsg.h");
            exported += 1;
        }
    }
    assert_eq!(exported, 11);
    for code in ["DSG_STATUS_OK = 0", "DSG_STATUS_PANIC = 8", "typedef struct DsgGraph DsgGraph;"] {
        assert!(header.contains(code), "{code}");
    }
}
