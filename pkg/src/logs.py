import datetime
import logging
import os

script_dir_path = os.path.dirname(os.path.dirname(os.path.realpath(__file__)))

# `WEAK_EPR_LOG_DIR` moves the log file out of the project directory.
LOG_DIR_ENV = "WEAK_EPR_LOG_DIR"
LOG_FORMAT = '%(asctime)s	%(levelname)s	%(message)s'


def log_file_path_in(log_dir_path):
	"""Monthly log file in `log_dir_path`, created (with the directory) when missing."""
	if not os.path.isdir(log_dir_path):
		os.makedirs(log_dir_path)
	time_str = datetime.datetime.now().strftime("%Y-%m")
	log_file_path = os.path.join(log_dir_path, time_str + '_weakepr.log')
	if not os.path.isfile(log_file_path):
		with open(log_file_path, "w") as f:
			f.write("")
	return log_file_path


def set_log_dir(log_dir_path):
	"""Send all further log records to the monthly file in `log_dir_path`.

	Args:
		log_dir_path (str): directory of the log file

	Returns:
		str: path of the log file now in use
	"""
	path = log_file_path_in(log_dir_path)
	root = logging.getLogger()
	for handler in list(root.handlers):
		if isinstance(handler, logging.FileHandler):
			root.removeHandler(handler)
			handler.close()
	handler = logging.FileHandler(path)
	handler.setFormatter(logging.Formatter(LOG_FORMAT))
	root.addHandler(handler)
	return path


log_file_path = log_file_path_in(os.environ.get(LOG_DIR_ENV) or os.path.join(script_dir_path, "logs"))

logging.basicConfig(
	filename = log_file_path,
	level = logging.INFO,
	format = LOG_FORMAT
)
