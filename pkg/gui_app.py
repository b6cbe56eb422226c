import glob
import json
import os

import pandas as pd
import streamlit as st

from src.config_manager import DEFAULT_CONFIG, ConfigManager, deep_merge, validate_config
from src.errors import ToolkitError
from src.pipeline import ExperimentPipeline, IDEAL
from src.reporting import read_curves, read_report_rows, rows_frame

ASSETS_DIR = "assets"


# --- Helper Functions ---
def list_configs():
    return sorted(glob.glob(os.path.join(ASSETS_DIR, "configs", "*.json")))


def list_bundles(output_dir):
    return sorted(os.path.dirname(p) for p in glob.glob(os.path.join(output_dir, "**", "reports.csv"), recursive=True))


def get_index(options, target):
    return options.index(target) if target in options else 0


def render_bundle(directory):
    st.subheader(os.path.relpath(directory))
    try:
        st.dataframe(rows_frame(read_report_rows(directory)), use_container_width=True)
    except ToolkitError as e:
        st.error(str(e))
        return
    curves = read_curves(directory)
    if curves:
        label = st.selectbox("Error vs. shots", sorted(curves), index=get_index(sorted(curves), IDEAL),
                             key=f"curve_{directory}")
        st.dataframe(curves[label], use_container_width=True)


# --- Page ---
st.set_page_config(page_title="ShadowBench", layout="wide")
st.title("ShadowBench")

if 'is_running' not in st.session_state:
    st.session_state['is_running'] = False
is_locked = st.session_state['is_running']

configs = list_configs()
st.sidebar.header("Experiment")
if not configs:
    st.sidebar.warning("No configs found. Run `python setup_assets.py` first.")
    st.stop()

config_path = st.sidebar.selectbox("Config", configs, format_func=os.path.basename, disabled=is_locked)
manager = ConfigManager(config_path)
try:
    raw = manager.load_raw()
except ToolkitError as e:
    st.error(str(e))
    st.stop()

st.sidebar.subheader("Overrides")
raw["seed"] = st.sidebar.number_input("Seed", value=int(raw["seed"]), step=1, disabled=is_locked)
raw["settings"] = st.sidebar.number_input("Settings (S)", min_value=1, value=int(raw["settings"]), disabled=is_locked)
raw["shots"] = st.sidebar.number_input("Shots per setting (T)", min_value=1, value=int(raw["shots"]), disabled=is_locked)
raw["scheme"]["name"] = st.sidebar.selectbox("Scheme", ["CS", "LBCS"], index=get_index(["CS", "LBCS"], raw["scheme"]["name"]),
                                             disabled=is_locked)
raw["schedule"]["mode"] = st.sidebar.selectbox("Schedule", ["blended", "regular"],
                                               index=get_index(["blended", "regular"], raw["schedule"]["mode"]),
                                               disabled=is_locked)
raw["qdt"]["enabled"] = st.sidebar.checkbox("Detector tomography", value=bool(raw["qdt"]["enabled"]), disabled=is_locked)

with st.sidebar.expander("Full config (JSON)"):
    edited = st.text_area("config", json.dumps(raw, indent=2), height=400, disabled=is_locked, label_visibility="collapsed")

c1, c2 = st.sidebar.columns(2)
save_clicked = c1.button("Save", disabled=is_locked)
run_clicked = c2.button("Run", type="primary", disabled=is_locked)

try:
    data = deep_merge(DEFAULT_CONFIG, json.loads(edited))
except json.JSONDecodeError as e:
    st.sidebar.error(f"Invalid JSON: {e}")
    data = None

if save_clicked and data is not None:
    if manager.save_config(data):
        st.sidebar.success(f"Saved {os.path.basename(config_path)}")

if run_clicked and data is not None:
    st.session_state['is_running'] = True
    progress = st.progress(0.0, text="Starting...")
    try:
        config = validate_config(data, os.path.dirname(os.path.abspath(config_path)), source=config_path)
        bundles = ExperimentPipeline().run(config, progress_callback=lambda f, msg: progress.progress(f, text=msg))
        st.success(f"Finished {len(bundles)} repetition(s)")
    except ToolkitError as e:
        st.error(str(e))
    finally:
        st.session_state['is_running'] = False

st.header("Bundles")
output_dir = data.get("output_dir", "output") if data else "output"
bundles = list_bundles(output_dir)
if not bundles:
    st.info(f"No bundles under {output_dir} yet.")
else:
    summary = []
    for directory in bundles:
        try:
            for row in read_report_rows(directory):
                summary.append({"bundle": os.path.relpath(directory, output_dir), **row})
        except ToolkitError:
            continue
    st.dataframe(pd.DataFrame(summary), use_container_width=True)
    selected = st.selectbox("Inspect bundle", bundles, format_func=lambda d: os.path.relpath(d, output_dir))
    render_bundle(selected)
