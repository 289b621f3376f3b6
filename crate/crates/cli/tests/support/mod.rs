//! Launching the real `shareal` binary against a scratch data directory.

#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use shareal_cli::Client;

pub const ADMIN: &str = "root";
pub const ADMIN_SECRET: &str = "root-secret";

pub struct Server {
    child: Option<Child>,
    pub url: String,
    pub data_dir: PathBuf,
    pub slots: usize,
}

impl Server {
    pub fn start(data_dir: &Path, slots: usize) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_shareal"))
            .args(["serve", "--listen", "127.0.0.1:0", "--tick-ms", "5"])
            .arg("--data-dir")
            .arg(data_dir)
            .args(["--slots", &slots.to_string(), "--admin-name", ADMIN, "--admin-secret", ADMIN_SECRET])
            .env("SHAREAL_LOG", "error")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn shareal serve");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).expect("read listen line");
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line from server: {line:?}"))
            .to_string();
        let url = format!("http://{addr}");
        let probe = Client::new(&url);
        let deadline = Instant::now() + Duration::from_secs(10);
        while !probe.status_ok() {
            assert!(Instant::now() < deadline, "server at {url} never became healthy");
            std::thread::sleep(Duration::from_millis(10));
        }
        Server { child: Some(child), url, data_dir: data_dir.to_path_buf(), slots }
    }

    pub fn pid(&self) -> u32 {
        self.child.as_ref().expect("running").id()
    }

    pub fn client(&self) -> Client {
        Client::new(&self.url)
    }

    pub fn admin(&self) -> Client {
        let mut c = self.client();
        c.login(ADMIN, ADMIN_SECRET).expect("admin login");
        c
    }

    /// A fresh analyst account, logged in.
    pub fn analyst(&self, name: &str) -> Client {
        self.admin().create_user(name, "pw", "analyst").expect("create analyst");
        let mut c = self.client();
        c.login(name, "pw").expect("analyst login");
        c
    }

    /// SIGKILL, no chance to clean up.
    pub fn kill(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }

    /// SIGTERM and wait for a graceful exit.
    pub fn stop(&mut self) {
        if let Some(mut c) = self.child.take() {
            unsafe {
                libc::kill(c.id() as libc::pid_t, libc::SIGTERM);
            }
            let deadline = Instant::now() + Duration::from_secs(15);
            loop {
                if c.try_wait().expect("wait server").is_some() {
                    break;
                }
                if Instant::now() > deadline {
                    let _ = c.kill();
                    let _ = c.wait();
                    panic!("server ignored SIGTERM");
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    }

    pub fn restart(&mut self) {
        self.stop();
        *self = Server::start(&self.data_dir.clone(), self.slots);
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}
