from .frame import Frame, frame_of, normalize_frame
from .io import load_scenarios, save_scenarios, scenario_from_dict, scenario_to_dict, validate_scenario
from .labels import compute_headway, label_intention
from .synth import SynthConfig, simulate_following, synth_generate
from .types import (DT, INTENTS, OBS_LEN, AgentTrack, BehaviorLabel, Lane, LaneGraph, Scenario,
                    ScenarioError)
