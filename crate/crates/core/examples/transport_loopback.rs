//! Sends a batch of framed payloads to an in-process receiver over loopback
//! TCP and checks every acknowledgement.
//!
//! `cargo run --example transport_loopback`

use std::net::TcpListener;
use std::thread;

use xraypipe::compress::{compress, CompressConfig};
use xraypipe::phantom::{phantom, PhantomSpec};
use xraypipe::transport::{send_frames, serve, Frame, RecvOptions, SendOptions};

pub fn run() -> xraypipe::Result<()> {
    let cfg = CompressConfig {
        target: (64, 64),
        ..Default::default()
    };
    let frames = (0..8)
        .map(|i| Ok(Frame::new(format!("study-{i:02}"), compress(&phantom(&PhantomSpec::new(256, i))?, &cfg)?)))
        .collect::<xraypipe::Result<Vec<_>>>()?;
    let wire: Vec<Vec<u8>> = frames.iter().map(Frame::encode).collect();

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    let receiver = thread::spawn(move || {
        let mut got = Vec::new();
        let opts = RecvOptions {
            max_frames: Some(8),
            ..Default::default()
        };
        serve(&listener, &opts, |f| {
            got.push(f);
            Ok(())
        })
        .map(|stats| (stats, got))
    });

    let acks = send_frames(&addr, &wire, &SendOptions::default())?;
    let (stats, got) = receiver.join().expect("receiver thread")?;
    for ((f, crc), w) in got.iter().zip(&acks).zip(&wire) {
        println!("{}: {} bytes on the wire, acked crc {crc:08x}", f.meta.image_id, w.len());
    }
    assert_eq!(got, frames);
    println!("{} accepted over {} connection(s)", stats.accepted, stats.connections);
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    run()
}
