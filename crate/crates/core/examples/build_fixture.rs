//! Regenerates the bundled fixtures under `fixtures/`:
//!
//! - `cm1-synthetic/`: CM1-shaped synthetic dataset, a replay-mode experiment
//!   config and the archive recorded from the synthetic responder.
//! - `cm1-links/`: five hand-picked CM1 links and two recorded responses.
//!
//! Usage: `cargo run -p tracebench-core --example build_fixture [-- <fixtures dir>]`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tracebench_core::corpus::{save_dataset, DatasetMeta, LinkPair, TraceDataset};
use tracebench_core::experiment::{
    run_config, BackendConfig, BackendMode, ClassificationConfig, ExperimentConfig, PolicyConfig, RankingConfig,
    SamplingConfig,
};
use tracebench_core::gateway::{CompletionRecord, CompletionRequest, ModelSettings, ReplayArchive};
use tracebench_core::pipeline::{ClassifyMode, InitialOrder};
use tracebench_core::prompting::{find_template, render_pair};
use tracebench_core::synthetic;

const CM1_SEED: u64 = 2023;

fn cm1_config(mode: BackendMode) -> ExperimentConfig {
    let simple = |prompt: &str| ClassificationConfig {
        prompt: prompt.into(),
        mode: ClassifyMode::Simple,
        thresholds: Vec::new(),
    };
    ExperimentConfig {
        name: "cm1-synthetic".into(),
        dataset: "dataset".into(),
        output_dir: "out".into(),
        seed: 7,
        sampling: SamplingConfig::default(),
        backend: BackendConfig {
            mode,
            archive: Some("replay.jsonl".into()),
            concurrency: 4,
            timeout_secs: 120,
        },
        model: ModelSettings::default(),
        policy: PolicyConfig::default(),
        summarize: None,
        classification: vec![
            simple("cm1-q1"),
            simple("cm1-q4"),
            ClassificationConfig {
                prompt: "cot-v1".into(),
                mode: ClassifyMode::Cot,
                thresholds: Vec::new(),
            },
            ClassificationConfig {
                prompt: "multi-question-v1".into(),
                mode: ClassifyMode::MultiQuestion,
                thresholds: (0..=6).collect(),
            },
        ],
        ranking: Some(RankingConfig {
            prompt: "rank-v1".into(),
            init: InitialOrder::Vsm,
        }),
    }
}

fn build_cm1(root: &Path) -> Result<(), Box<dyn std::error::Error>> {
    if root.exists() {
        fs::remove_dir_all(root)?;
    }
    let dataset = synthetic::generate(&synthetic::CM1, CM1_SEED)?;
    save_dataset(&dataset, root.join("dataset"))?;
    run_config(&cm1_config(BackendMode::Synthetic), root)?;
    fs::remove_dir_all(root.join("out"))?;
    let config = toml::to_string(&cm1_config(BackendMode::Replay))?;
    fs::write(root.join("experiment.toml"), config)?;
    Ok(())
}

const LINKS: [(&str, &str); 5] = [
    (
        "The DPU-CCM shall implement a mechanism whereby large memory loads and dumps can be accomplished incrementally.",
        "Memory Upload and Download Handling Data can be uploaded to several types of locations, including:\n- DRAM\n- EEPROM\n- Hardware registers\n- EEPROM filesystem\nThe D-MEM-DAT-UPLD command specifies the target location. If the destination is the EEPROM filesystem, a \"block number\" is provided in lieu of a memory address, which is used by the DPU FSW to formulate a filename of the form eefs1:DPU_blk.##, where ## is the block number. In this case, once the entirety of the uploaded data is received by the DPU FSW, the uploaded data is then written to that file in the EEPROM filesystem. If a file already exists with that name, it is overwritten. The EEPROM filesystem can be reinitialized using the command D-MEM-DISK-INIT.",
    ),
    (
        "The DPU-TMALI shall utilize SCM-DCI-SR, along with ERRNO provided by DPU-DCI to decode errors and place them on an error queue for DPU-CCM.",
        "Control and Monitoring the CCM Control Task initializes the DPU FSW. It is the responsibility of the CCM Control Task to establish a successful boot. It does so by blocking on temporary semaphores, each with a 5 second timeout, after spawning the SCU Interface Task and the CCM Command Task. If both of these tasks report a successful initialization by giving the semaphore, the CCM Control Task toggles the BC_INDEX parameter in EEPROM to indicate a successful boot. If either task does not report a successful initialization, the CCM Control Task disables the watchdog strobe to effect a reboot of the DPU. The rationale for selecting the successful initialization of these two tasks as the definition of a successful boot is that the DPU FSW requires these tasks, as a minimum, to establish ground contact and provide commandability. Once this initialization is complete, the task blocks on a binary semaphore which is given by the SCUI Command ISR upon arrival of the 1 Hz Clock Message. In the event a Clock Message does not arrive, the semaphore will time out after 1.5 seconds. The CCM Control Task remains alive to create and transmit DPU housekeeping at the appropriate intervals, perform various periodic processing tasks, and to process memory dump commands. The final call to ccmErrEnq() is performed in order that if an error occurs in an interrupt service routine, a global variable is set to the value of the errno which is then enqueued into the Error/Event Queue as part of this task\u{2019}s normal processing. The DPU-CCM shall collect a TASK_HBEAT from DPU-SCUI, DPU-CCM, DPU-DCX, DPU-TMALI, and DPU-DPA. Non-responsive tasks will be reported in DPU_HK.",
    ),
    (
        "The DPU-CCM shall collect a TASK_HBEAT from DPU-SCUI, DPU-CCM, DPU-DCX, DPU-TMALI, and DPU-DPA . Non-responsive tasks will be reported in DPU_HK.",
        "Control and Monitoring Every time the CCM Control executes, it calls ccmPerProcess() to handle periodic processing responsibilities. Such responsibilities include analog to digital conversion updates, DPU task monitoring, ICU heartbeat message production, and watchdog strobe. The ccmHealthChk() function, called by ccmPerProcess() verifies the execution of other tasks by monitoring the amount of time that has elapsed since each task last reported. Other tasks report their execution to the CCM Control Task by calling the function, ccmTaskReport(), providing their task index. Each task has an expected execution frequency, and if a task does not execute as expected, an error is reported in DPU housekeeping. If the Command Dispatch Task fails to report for an extended period, the DPU will execute a reboot, since it is impossible to command the DPU if this task is not executing, otherwise it will strobe the watchdog.",
    ),
    (
        "The DPU-TMALI shall utilize SCM_DCI_SR, along with ERRNO provided by DPU-DCI to decode errors and place them on an error queue for DPU-CCM.",
        "Error Collection and Reporting The ccmErrEnq() function tracks the last error reported and its frequency of occurrence. Once an error code has been reported it becomes the previously reported error code maintained by ccmErrEnq(). A repetition count is then incremented for each subsequent, consecutively reported, identical instance of this previously reported error. If this error code is reported more than once in one high-rate housekeeping reporting period, then a special error, S_ccm_ERR_REPEAT is enqueued with the repetition count for the error encoded in the least significant byte. This mechanism effectively reduces the potential for housekeeping telemetry to become flooded with a single repeated error.",
    ),
    (
        "The DPU-CCM shall process real-time non-deferred commands within B ms of receipt from the ICU or the SCU.",
        "The Command and Control CSC provides the core command and control functionality for the system. It includes tasks for initializing the system at bootup, scheduling housekeeping data generation, monitoring other tasks, executing periodic tasks, and receiving and dispatching real-time commands. It maintains data structures for system state, commands, errors and events.",
    ),
];

const LINK4_RESPONSE: &str = "Yes, there is a traceability link between (1) and (2). (1) mentions that the DPU-TMALI places errors on an error queue for the DPU-CCM.\n\n(2) describes the error collection and reporting mechanism of the DPU-CCM, specifically referring to enqueueing errors.\n\nSo (2) provides an implementation detail for the error queueing functionality briefly mentioned in (1). Therefore, there is a traceability link between these two artifacts in the software system.";

const LINK5_RESPONSE: &str = "<related> Both specify requirements related to processing commands within a certain time </related>\n<unrelated> Requirement 1 specifies a time constraint while requirement 2 provides a general description of a command and control subsystem</unrelated> <answer>yes</answer>";

fn cm1_links_dataset() -> Result<TraceDataset, Box<dyn std::error::Error>> {
    let mut meta = DatasetMeta::new("CM1-links");
    meta.parent_kind = "high-level requirement".into();
    meta.child_kind = "low-level requirement".into();
    let parents = LINKS.iter().enumerate().map(|(i, (s, _))| (format!("HLR-{}", i + 1), s.to_string()));
    let children = LINKS.iter().enumerate().map(|(i, (_, t))| (format!("LLR-{}", i + 1), t.to_string()));
    // link 4 was a false positive; the others are true links
    let links = [1, 2, 3, 5].map(|i| LinkPair::new(format!("HLR-{i}"), format!("LLR-{i}")));
    Ok(TraceDataset::new(meta, parents, children, links)?)
}

fn build_cm1_links(root: &Path) -> Result<(), Box<dyn std::error::Error>> {
    if root.exists() {
        fs::remove_dir_all(root)?;
    }
    let dataset = cm1_links_dataset()?;
    save_dataset(&dataset, root.join("dataset"))?;

    let settings = ModelSettings::default();
    let mut archive = ReplayArchive::new();
    let responses: BTreeMap<usize, (&str, &str)> =
        [(4, ("cm1-q4", LINK4_RESPONSE)), (5, ("cot-v1", LINK5_RESPONSE))].into_iter().collect();
    for (link, (prompt_id, response)) in responses {
        let template = find_template(prompt_id)?;
        let parent = dataset.parent(&format!("HLR-{link}")).expect("built above");
        let child = dataset.child(&format!("LLR-{link}")).expect("built above");
        let request = CompletionRequest::new(render_pair(&template, parent, child)?, &settings);
        archive.insert(CompletionRecord {
            digest: request.digest(),
            request,
            response_text: response.to_string(),
            provider: "recorded".into(),
            elapsed_ms: 0,
        });
    }
    archive.save(&root.join("replay.jsonl"))?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    build_cm1(&root.join("cm1-synthetic"))?;
    build_cm1_links(&root.join("cm1-links"))?;
    println!("fixtures written to {}", root.display());
    Ok(())
}
