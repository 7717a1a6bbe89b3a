"""This module provides functions for reading configurations and writing reports as JSON using jsonpickle."""
import json
from typing import Dict

import jsonpickle
import jsonpickle.ext.numpy as jsonpickle_numpy

jsonpickle_numpy.register_handlers()


def write_json(data, file):
    """
    Serialize a report (dataclasses, dicts, numpy values) to a JSON file using jsonpickle.

    Parameters:
        data (any): The report to be serialized.
        file (str): The file path where the JSON data will be stored.

    Returns:
        str: The file path.
    """
    jsonpickle.set_encoder_options('json', indent=4, sort_keys=True)
    encoded_data = jsonpickle.encode(data, unpicklable=False)
    with open(file, 'w') as outfile:
        outfile.write(encoded_data)
        outfile.write('\n')
    return file


def read_json(file):
    """
    Deserialize JSON data from a file.

    Parameters:
        file (str): The file path from which the JSON data should be read.

    Returns:
        any: The decoded JSON document.
    """
    with open(file, 'r') as infile:
        data = json.load(infile)
    return data


def read_config(file) -> Dict:
    """
    Reads a run configuration.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the file is not a JSON object.
    """
    try:
        data = read_json(file)
    except json.JSONDecodeError as error:
        raise ValueError(f"{file}: line {error.lineno}: {error.msg}") from error
    if not isinstance(data, dict):
        raise ValueError(f"{file}: a configuration must be a JSON object.")
    return data
