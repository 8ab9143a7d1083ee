import logging

logging.getLogger('figurine').addHandler(logging.NullHandler())
