//! Drives the command-line entry point in process: gen, train, attack,
//! certify, each writing a JSON report.

use wdro::cli::run;

fn main() {
    let dir = std::env::temp_dir().join("wdro_pipeline");
    let p = |name: &str| dir.join(name).display().to_string();
    let steps: [Vec<String>; 4] = [
        vec![
            "gen".into(),
            "--m".into(),
            "3".into(),
            "--N".into(),
            "150".into(),
            "--separation".into(),
            "3".into(),
            "--out".into(),
            p("d.csv"),
        ],
        vec![
            "train".into(),
            "--data".into(),
            p("d.csv"),
            "--epochs".into(),
            "60".into(),
            "--lr".into(),
            "0.5".into(),
            "--out".into(),
            p("m.json"),
        ],
        vec![
            "attack".into(),
            "--model".into(),
            p("m.json"),
            "--data".into(),
            p("d.csv"),
            "--p".into(),
            "2".into(),
            "--delta".into(),
            "0.01".into(),
            "--out".into(),
            p("attack.json"),
        ],
        vec![
            "certify".into(),
            "--model".into(),
            p("m.json"),
            "--data".into(),
            p("d.csv"),
            "--p".into(),
            "2".into(),
            "--delta".into(),
            "0.005".into(),
            "--out".into(),
            p("certify.json"),
        ],
    ];
    std::fs::create_dir_all(&dir).expect("temp dir");
    for args in steps {
        let code = run(std::iter::once("wdro".to_string()).chain(args.iter().cloned()));
        println!("{:<8} exit {code}", args[0]);
    }
    println!("reports in {}", dir.display());
}
