//! Real process crashes: a child appends in a loop and reports each
//! acknowledged offset on stdout until it is SIGKILLed.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use screenforge_queue::QueueLog;

const CHILD_ENV: &str = "SCREENFORGE_QUEUE_KILL_CHILD";

#[test]
fn child_writer() {
    let Ok(root) = std::env::var(CHILD_ENV) else {
        return;
    };
    let log = QueueLog::open(&root).unwrap();
    let start = log.topic("participants", true).unwrap().next_offset();
    let stdout = std::io::stdout();
    for i in start.. {
        let o = log
            .append("participants", b"k", format!("record-{i}").as_bytes())
            .unwrap();
        let mut out = stdout.lock();
        writeln!(out, "ACK {o}").unwrap();
        out.flush().unwrap();
    }
}

#[test]
fn sigkill_never_loses_acknowledged_records() {
    if std::env::var(CHILD_ENV).is_ok() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = std::env::current_exe().unwrap();
    let mut acked_max: Option<u64> = None;
    for round in 0..5u64 {
        let mut child = Command::new(&exe)
            .args(["--exact", "child_writer", "--nocapture", "--test-threads", "1"])
            .env(CHILD_ENV, tmp.path())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let stdout = child.stdout.take().unwrap();
        let reader = std::thread::spawn(move || {
            let mut last = None;
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if let Some(o) = line.strip_prefix("ACK ") {
                    last = Some(o.trim().parse::<u64>().unwrap());
                }
            }
            last
        });
        std::thread::sleep(Duration::from_millis(150 + round * 37));
        child.kill().unwrap();
        child.wait().unwrap();
        if let Some(o) = reader.join().unwrap() {
            acked_max = Some(acked_max.map_or(o, |m: u64| m.max(o)));
        }

        let log = QueueLog::open(tmp.path()).unwrap();
        let next = log.recover("participants").unwrap();
        let acked = acked_max.map_or(0, |m| m + 1);
        assert!(next >= acked, "round {round}: next {next} < acknowledged {acked}");
        let records = log.read("participants", 0, usize::MAX).unwrap();
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.offset, i as u64);
            assert_eq!(r.payload, format!("record-{i}").into_bytes());
        }
    }
    assert!(acked_max.is_some());
}
