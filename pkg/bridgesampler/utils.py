# MIT License
#
# Copyright (c) 2019 Tuomas Halvari, Juha Harviainen, Juha Mylläri, Antti Röyskö, Juuso Silvennoinen
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime
from multiprocessing.pool import ThreadPool
from pathlib import Path

from bridgesampler.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

NUM_THREADS_ENV = "BRIDGESAMPLER_NUM_THREADS"


def generate_unique_path(folder_name, extension, prefix=None, root=None):
    """Generates a unique path name with desired folder name, extension and prefix.

    Args:
        folder_name (str): The name of the folder which the file path should contain.
        extension (str): The file extension of the file.
        prefix (str, optional): The optional prefix of the filename. Defaults to None.
        root (str, optional): Directory the folder is created in. Defaults to the project root.

    Returns:
        str: The path generated by the function.
    """
    folder = Path(root or get_project_root()) / folder_name
    folder.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    name = f"{prefix}_{timestamp}" if prefix else timestamp
    return str(folder / f"{name}.{extension}")


def get_project_root():
    """Returns a path to the root of the project.

    Returns:
        pathlib.PosixPath: The path to the root of the project.
    """
    return Path(__file__).resolve().parents[1]


def write_json(path, obj):
    with open(path, "w") as file:
        json.dump(obj, file, indent=2)
    return path


def read_json(path):
    try:
        with open(path, "r") as file:
            return json.load(file)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"The file {path} is not valid JSON.") from e


def num_threads(default=1):
    """Returns the worker thread cap from the environment, or default if it is not set.
    """
    value = os.environ.get(NUM_THREADS_ENV)
    if value is None:
        return default
    try:
        n = int(value)
    except ValueError as e:
        raise ConfigurationError(f"{NUM_THREADS_ENV} must be an integer, got '{value}'.") from e
    if n < 1:
        raise ConfigurationError(f"{NUM_THREADS_ENV} must be positive, got {n}.")
    return n


@contextmanager
def worker_pool(n_threads=None):
    """Yields a thread pool with n_threads workers, or None when a single thread is used.

    Args:
        n_threads (int, optional): Number of threads. Defaults to the value of BRIDGESAMPLER_NUM_THREADS.
    """
    n_threads = num_threads() if n_threads is None else n_threads
    if n_threads <= 1:
        yield None
        return
    logger.debug(f"Using {n_threads} worker threads")
    with ThreadPool(n_threads) as pool:
        yield pool


def filter_optimized_results(df, group_name, score_name, is_higher_score_better):
    """Removes suboptimal rows from the dataframe, returning only the best one of every group.

    Args:
        df (pandas.DataFrame): A dataframe containing the results of a sweep.
        group_name (str or list): The column(s) by which the data will be grouped.
        score_name (str): The name of the score we want to optimize.
        is_higher_score_better (bool): If true, then only the highest results are returned.
            Otherwise the lowest results are returned.

    Returns:
        pandas.DataFrame: A dataframe containing the optimized results.
    """
    scored = df.dropna(subset=[score_name])
    grouped = scored.groupby(group_name, sort=False)[score_name]
    best = grouped.idxmax() if is_higher_score_better else grouped.idxmin()
    return scored.loc[best].reset_index(drop=True)
