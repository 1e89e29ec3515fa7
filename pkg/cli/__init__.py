"""rodctl command-line front end."""

from configs.rod_config import setup_environment

# BLAS pools read their thread caps when numpy is first imported
setup_environment()
