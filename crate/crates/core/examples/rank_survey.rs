//! Mean rank and system rank S = (N + 1 − R) / N from a human ranking
//! survey in CSV (`item,system,rank`, ties allowed as 1224 ranks).
//!
//!     cargo run --example rank_survey -- survey.csv

use segrt::evalkit::{compare_systems, ranks_by_name, RankSurvey};

const DEMO: &str = "item,system,rank
post1,naver,3
post1,kospacing,1
post1,proposed,1
post2,naver,1
post2,kospacing,2
post2,proposed,2
post3,naver,2
post3,kospacing,3
post3,proposed,1
";

fn main() {
    let survey = match std::env::args().nth(1) {
        Some(path) => RankSurvey::from_csv(std::fs::File::open(path).expect("survey file")),
        None => RankSurvey::from_csv(DEMO.as_bytes()),
    }
    .expect("complete survey");
    let report = compare_systems(&survey).expect("non-empty survey");
    print!("{}", report.to_text());

    let ordering = ranks_by_name(&[vec!["proposed", "kospacing"], vec!["naver"]]).expect("partition");
    println!("ordering {{proposed, kospacing}} > naver gives {ordering:?}");
}
