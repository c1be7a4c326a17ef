//! Renders a PSNR comparison table and a bar chart from literal values.
//!
//! `cargo run --example report_table`

use xraypipe::report::{bar_chart_svg, psnr_table};

pub fn run() -> xraypipe::Result<()> {
    let rows = vec![
        ("Learned restorer".to_string(), 34.10),
        ("Bicubic".to_string(), 31.42),
        ("Nearest neighbour".to_string(), 28.77),
    ];
    print!("{}", psnr_table(&rows));
    let svg = bar_chart_svg("PSNR by method", "dB", &rows);
    println!("svg chart: {} bytes", svg.len());
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    run()
}
