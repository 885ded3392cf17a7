//! Driving the command line from code, against the shipped fixtures.

use fellbundle::cli::run;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let runs: [&[&str]; 4] = [
        &["validate", "delta.json"],
        &["validate", "broken.json"],
        &["algebra", "klein_cocycle.json", "--report", "dims,center,masa"],
        &["morita", "stabilize", "z2_line.json"],
    ];
    for args in runs {
        let argv: Vec<String> = std::iter::once("fellbundle".to_string())
            .chain(args.iter().map(|a| if a.ends_with(".json") { format!("{dir}/{a}") } else { a.to_string() }))
            .collect();
        let inv = run(argv);
        println!("$ fellbundle {}  -> exit {}", args.join(" "), inv.exit_code);
        print!("{}", inv.output);
    }
}
