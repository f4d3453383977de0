use gdlnn::fixtures::random_program;
use gdlnn::{parse_program, print_program, GdlError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ODD_BOUNDS: [f64; 7] = [-2.25, -1e-7, 0.0, 0.1, 3.0, 17.5, 1e10];

proptest! {
    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>(), d in 1usize..4, c in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_program(&mut rng, 6, d, c, &ODD_BOUNDS);
        let text = print_program(&p);
        let back = parse_program(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(print_program(&back), text);
    }

    #[test]
    fn parser_never_panics(text in "[ -~\n]{0,80}") {
        let _ = parse_program(&text);
    }
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let p = parse_program("// header\n\nnode a <[1.0, 2.0]> // trailing\n  \nedge (a, a)\n").unwrap();
    assert_eq!(print_program(&p), "node a <[1.0, 2.0]>\nedge (a, a)");
}

#[test]
fn structural_errors_are_reported() {
    assert!(matches!(parse_program("edge (a, b)"), Err(GdlError::UndeclaredVariable { .. })));
    assert!(matches!(parse_program("node a\nnode a"), Err(GdlError::DuplicateVariable { .. })));
    assert!(matches!(parse_program("node a\nedge (a, a)\nedge (a, a)"), Err(GdlError::DuplicateEdge { .. })));
    assert!(parse_program("node a <[2.0, 1.0]>").is_err());
}
